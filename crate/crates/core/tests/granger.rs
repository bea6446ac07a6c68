use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tvptvar::granger::{self, EdgeRule, GcAccumulator};
use tvptvar::tensor::Tensor3;

/// Draws scattered tightly around a planted path of coefficient tensors.
fn noisy_draws(truth: &[Tensor3], sd: f64, draws: usize, seed: u64) -> Vec<Vec<Tensor3>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..draws)
        .map(|_| {
            truth
                .iter()
                .map(|a| {
                    let data = a.as_slice().iter().map(|v| v + sd * rng.sample::<f64, _>(StandardNormal)).collect();
                    Tensor3::from_vec(a.dims(), data).unwrap()
                })
                .collect()
        })
        .collect()
}

fn planted(n: usize, p: usize, t_len: usize, edge: impl Fn(usize, usize, usize) -> bool) -> Vec<Tensor3> {
    (0..t_len)
        .map(|t| {
            let mut a = Tensor3::zeros([n, n, p]).unwrap();
            for from in 0..n {
                for to in 0..n {
                    if edge(t, from, to) {
                        a.set(to, from, (from + to) % p, 0.5);
                    }
                }
            }
            a
        })
        .collect()
}

fn cube_of(draws: &[Vec<Tensor3>], delta: f64) -> granger::GcProbCube {
    granger::gc_probabilities(draws.iter().map(Vec::as_slice), delta).unwrap()
}

#[test]
fn planted_edges_separate_from_nulls() {
    let (n, t_len) = (5, 200);
    let edge = |_: usize, from: usize, to: usize| (from + 2 * to).is_multiple_of(3) && from != to;
    let truth = planted(n, 3, t_len, edge);
    let cube = cube_of(&noisy_draws(&truth, 0.003, 400, 1), 0.01);
    for t in 0..t_len {
        for from in 0..n {
            for to in 0..n {
                if from == to {
                    continue;
                }
                let p = cube.get(t, from, to);
                if edge(t, from, to) {
                    assert!(p >= 0.999, "planted ({from}->{to}) at {t}: {p}");
                } else {
                    assert!(p <= 0.5, "null ({from}->{to}) at {t}: {p}");
                }
            }
        }
    }
}

#[test]
fn top_fifty_mostly_planted() {
    let (n, t_len) = (12, 3);
    let mut count = 0;
    let mut chosen = vec![false; n * n];
    for k in 0..n * n {
        let (from, to) = (k / n, k % n);
        if from != to && (from + to) % 2 == 0 && count < 50 {
            chosen[k] = true;
            count += 1;
        }
    }
    assert_eq!(count, 50);
    let truth = planted(n, 2, t_len, |_, from, to| chosen[from * n + to]);
    let cube = cube_of(&noisy_draws(&truth, 0.008, 300, 2), 0.01);
    let net = granger::gc_network(&cube, 1, EdgeRule::TopK(50)).unwrap();
    assert_eq!(net.edges.len(), 50);
    let hits = net.edges.iter().filter(|e| chosen[e.from * n + e.to]).count();
    assert!(hits as f64 >= 0.9 * 50.0, "{hits} of 50");
}

#[test]
fn counts_step_up_at_planted_change_point() {
    let (n, t_len) = (4, 100);
    let truth = planted(n, 2, t_len, |t, from, to| t > t_len / 2 && from != to && (from + to) % 2 == 1);
    let cube = cube_of(&noisy_draws(&truth, 0.003, 200, 3), 0.01);
    let counts = granger::gc_count_series(&cube, EdgeRule::Threshold(0.999)).unwrap();
    assert!(counts[..t_len / 2].iter().all(|c| *c == 0));
    assert!(counts[t_len / 2 + 1..].iter().all(|c| *c == 8));
}

#[test]
fn zero_threshold_keeps_all_positive_pairs() {
    let truth = planted(3, 1, 2, |_, from, to| from != to);
    let mut draws = noisy_draws(&truth, 0.0, 2, 0);
    for a in &mut draws[1] {
        for i in 0..3 {
            a.set(i, i, 0, 0.2);
        }
    }
    let cube = cube_of(&draws, 0.01);
    let net = granger::gc_network(&cube, 0, EdgeRule::Threshold(0.0)).unwrap();
    assert_eq!(net.edges.len(), 6);
    assert!(net.edges.iter().all(|e| e.from != e.to));
}

fn random_draws(seed: u64, draws: usize) -> Vec<Vec<Tensor3>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..draws)
        .map(|_| {
            (0..4)
                .map(|_| Tensor3::from_vec([3, 3, 2], (0..18).map(|_| 0.03 * rng.sample::<f64, _>(StandardNormal)).collect()).unwrap())
                .collect()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smaller_delta_never_lowers_probability(seed in any::<u64>(), d1 in 0.0..0.05f64, d2 in 0.0..0.05f64) {
        let draws = random_draws(seed, 20);
        let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        let a = cube_of(&draws, lo);
        let b = cube_of(&draws, hi);
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!(x >= y);
        }
    }

    #[test]
    fn higher_threshold_never_adds_edges(seed in any::<u64>(), p1 in 0.0..1.0f64, p2 in 0.0..1.0f64) {
        let cube = cube_of(&random_draws(seed, 20), 0.02);
        let (lo, hi) = if p1 < p2 { (p1, p2) } else { (p2, p1) };
        let a = granger::gc_count_series(&cube, EdgeRule::Threshold(lo)).unwrap();
        let b = granger::gc_count_series(&cube, EdgeRule::Threshold(hi)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(x >= y);
        }
    }

    #[test]
    fn draw_order_does_not_matter(seed in any::<u64>(), shift in 1usize..19) {
        let draws = random_draws(seed, 20);
        let mut shuffled = draws.clone();
        shuffled.rotate_left(shift);
        shuffled.swap(0, 7);
        prop_assert_eq!(cube_of(&draws, 0.02), cube_of(&shuffled, 0.02));
    }

    #[test]
    fn probabilities_lie_on_draw_grid(seed in any::<u64>(), d in 1usize..30) {
        let cube = cube_of(&random_draws(seed, d), 0.02);
        prop_assert_eq!(cube.draws, d as u64);
        for p in cube.as_slice() {
            let k = p * d as f64;
            prop_assert!((k - k.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn merging_split_accumulators_equals_single_pass(seed in any::<u64>(), split in 1usize..19) {
        let draws = random_draws(seed, 20);
        let mut a = GcAccumulator::new(0.02, 3, 4).unwrap();
        let mut b = GcAccumulator::new(0.02, 3, 4).unwrap();
        for d in &draws[..split] {
            a.add_draw(d).unwrap();
        }
        for d in &draws[split..] {
            b.add_draw(d).unwrap();
        }
        b.merge(&a).unwrap();
        prop_assert_eq!(b.probabilities().unwrap(), cube_of(&draws, 0.02));
    }
}
