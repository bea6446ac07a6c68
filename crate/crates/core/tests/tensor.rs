use nalgebra::DMatrix;
use proptest::prelude::*;
use tvptvar::selection;
use tvptvar::tensor::{self, Tensor3};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

/// `(B1, B2, B3)` with shapes `N x R`, `N x R`, `P x R`.
fn loadings() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    (1usize..5, 1usize..4, 1usize..4).prop_flat_map(|(n, p, r)| (matrix(n, r), matrix(n, r), matrix(p, r)))
}

fn brute_force(b1: &DMatrix<f64>, b2: &DMatrix<f64>, b3: &DMatrix<f64>) -> Tensor3 {
    let mut t = Tensor3::zeros([b1.nrows(), b2.nrows(), b3.nrows()]).unwrap();
    for i in 0..b1.nrows() {
        for j in 0..b2.nrows() {
            for k in 0..b3.nrows() {
                let v: f64 = (0..b1.ncols()).map(|r| b1[(i, r)] * b2[(j, r)] * b3[(k, r)]).sum();
                t.set(i, j, k, v);
            }
        }
    }
    t
}

/// Mode-1 matricization of the superdiagonal identity times `(B3 ⊗ B2)ᵀ`,
/// with the Kronecker product formed densely.
fn kronecker_reconstruction(b1: &DMatrix<f64>, b2: &DMatrix<f64>, b3: &DMatrix<f64>) -> DMatrix<f64> {
    let r = b1.ncols();
    let ident = tensor::mode1_matricize(&tensor::superdiagonal_identity(r).unwrap());
    b1 * ident * b3.kronecker(b2).transpose()
}

#[test]
fn outer_products_by_hand() {
    let t = tensor::outer3(&[1.0], &[1.0], &[1.0]).unwrap();
    assert_eq!(t.as_slice(), &[1.0]);
    let t = tensor::outer3(&[1.0, 2.0], &[3.0], &[4.0]).unwrap();
    assert_eq!(t.dims(), [2, 1, 1]);
    assert_eq!(t.as_slice(), &[12.0, 24.0]);
}

#[test]
fn matricization_places_lags_side_by_side() {
    let a1 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    let a2 = DMatrix::from_row_slice(2, 2, &[5.0, 6.0, 7.0, 8.0]);
    let mut t = Tensor3::zeros([2, 2, 2]).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            t.set(i, j, 0, a1[(i, j)]);
            t.set(i, j, 1, a2[(i, j)]);
        }
    }
    let expected = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
    assert_eq!(tensor::mode1_matricize(&t), expected);
    let single = Tensor3::from_vec([1, 1, 1], vec![5.0]).unwrap();
    assert_eq!(tensor::mode1_matricize(&single), DMatrix::from_element(1, 1, 5.0));
}

#[test]
fn identity_loadings_give_superdiagonal() {
    for r in 1..5 {
        let id = DMatrix::identity(r, r);
        let t = tensor::cp_compose(&id, &id, &id).unwrap();
        assert_eq!(t, tensor::superdiagonal_identity(r).unwrap());
    }
    let t = tensor::superdiagonal_identity(3).unwrap();
    assert_eq!(t.as_slice().iter().filter(|v| **v != 0.0).count(), 3);
    for i in 0..3 {
        assert_eq!(t.get(i, i, i), 1.0);
    }
}

#[test]
fn composition_sums_independent_outer_products() {
    let b1 = DMatrix::from_fn(2, 3, |i, r| (i + 2 * r) as f64 * 0.3 - 0.5);
    let b2 = DMatrix::from_fn(2, 3, |i, r| ((i * 5 + r) % 4) as f64 - 1.5);
    let b3 = DMatrix::from_fn(2, 3, |i, r| 1.0 / (1.0 + i as f64 + r as f64));
    let mut sum = Tensor3::zeros([2, 2, 2]).unwrap();
    for r in 0..3 {
        let col = |m: &DMatrix<f64>| m.column(r).iter().copied().collect::<Vec<_>>();
        sum.axpy(1.0, &tensor::outer3(&col(&b1), &col(&b2), &col(&b3)).unwrap()).unwrap();
    }
    assert!(tensor::cp_compose(&b1, &b2, &b3).unwrap().max_abs_diff(&sum) < 1e-14);
}

#[test]
fn parameter_count_examples() {
    assert_eq!(tensor::param_count(27, 4, 1).0, 2916);
    assert_eq!(tensor::param_count(27, 4, 7).0, 2916);
    assert_eq!(tensor::param_count(3, 3, 3).1, 27);
    assert_eq!(tensor::param_count(1, 1, 1), (1, 3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn composition_matches_index_loop((b1, b2, b3) in loadings()) {
        let t = tensor::cp_compose(&b1, &b2, &b3).unwrap();
        prop_assert!(t.max_abs_diff(&brute_force(&b1, &b2, &b3)) < 1e-12);
    }

    #[test]
    fn matricized_composition_matches_kronecker_form((b1, b2, b3) in loadings()) {
        let t = tensor::cp_compose(&b1, &b2, &b3).unwrap();
        let dense = kronecker_reconstruction(&b1, &b2, &b3);
        prop_assert!((tensor::mode1_matricize(&t) - &dense).amax() < 1e-10);
        let kr = tensor::khatri_rao(&b3, &b2).unwrap();
        prop_assert!((&b1 * kr.transpose() - dense).amax() < 1e-10);
    }

    #[test]
    fn unit_product_rescaling_and_permutation_leave_tensor_unchanged(
        (b1, b2, b3) in loadings(),
        seed in any::<u64>(),
    ) {
        let r = b1.ncols();
        let s1: Vec<f64> = (0..r).map(|k| 0.5 + ((seed >> (3 * k)) & 7) as f64 * 0.25).collect();
        let s2: Vec<f64> = (0..r).map(|k| if (seed >> (20 + k)) & 1 == 0 { -1.5 } else { 0.75 }).collect();
        let scale = |m: &DMatrix<f64>, s: &[f64]| DMatrix::from_fn(m.nrows(), r, |i, k| m[(i, k)] * s[k]);
        let s3: Vec<f64> = (0..r).map(|k| 1.0 / (s1[k] * s2[k])).collect();
        let perm: Vec<usize> = (0..r).map(|k| (k + seed as usize % r) % r).collect();
        let permute = |m: DMatrix<f64>| DMatrix::from_fn(m.nrows(), r, |i, k| m[(i, perm[k])]);
        let original = tensor::cp_compose(&b1, &b2, &b3).unwrap();
        let moved = tensor::cp_compose(
            &permute(scale(&b1, &s1)),
            &permute(scale(&b2, &s2)),
            &permute(scale(&b3, &s3)),
        )
        .unwrap();
        prop_assert!(original.max_abs_diff(&moved) < 1e-10);
    }

    #[test]
    fn outer_product_is_linear_in_each_argument(
        v1 in prop::collection::vec(-3.0..3.0f64, 1..5),
        v2 in prop::collection::vec(-3.0..3.0f64, 1..5),
        v3 in prop::collection::vec(-3.0..3.0f64, 1..5),
        a in -4.0..4.0f64,
    ) {
        let base = tensor::outer3(&v1, &v2, &v3).unwrap();
        let scaled: Vec<f64> = v1.iter().map(|x| a * x).collect();
        let mut expected = base.clone();
        expected.scale(a);
        prop_assert!(tensor::outer3(&scaled, &v2, &v3).unwrap().max_abs_diff(&expected) < 1e-12);
        let scaled3: Vec<f64> = v3.iter().map(|x| a * x).collect();
        prop_assert!(tensor::outer3(&v1, &v2, &scaled3).unwrap().max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn fold_inverts_matricization(
        dims in (1usize..5, 1usize..5, 1usize..5),
        seed in any::<u64>(),
    ) {
        let (i1, i2, i3) = dims;
        let data: Vec<f64> = (0..i1 * i2 * i3).map(|k| ((seed.wrapping_add(k as u64 * 7919)) % 1000) as f64 / 100.0).collect();
        let t = Tensor3::from_vec([i1, i2, i3], data).unwrap();
        let m = tensor::mode1_matricize(&t);
        prop_assert_eq!(m.shape(), (i1, i2 * i3));
        prop_assert_eq!(tensor::mode1_fold(&m, i2, i3).unwrap(), t);
        let back = tensor::mode1_matricize(&tensor::mode1_fold(&m, i2, i3).unwrap());
        prop_assert_eq!(back, m);
    }

    #[test]
    fn kneedle_ignores_positive_affine_maps(
        values in prop::collection::vec(-1e3..1e3f64, 3..12),
        a in 0.01..100.0f64,
        b in -1e4..1e4f64,
    ) {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assume!(hi - lo > 1e-6);
        let moved: Vec<f64> = values.iter().map(|v| a * v + b).collect();
        let (r0, r1) = (selection::kneedle(&values), selection::kneedle(&moved));
        // Near-ties can flip under rounding; only compare clear winners.
        if let (Ok(r0), Ok(r1)) = (r0, r1) {
            if r0 != r1 {
                let n = values.len() as f64 - 1.0;
                let norm = |v: &[f64], r: usize| {
                    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(*x), h.max(*x)));
                    let y = |k: usize| (v[k] - lo) / (hi - lo);
                    let x = (r - 1) as f64 / n;
                    (y(0) + x * (y(v.len() - 1) - y(0)) - y(r - 1)).abs()
                };
                prop_assert!((norm(&values, r0) - norm(&values, r1)).abs() < 1e-9);
            }
        } else {
            prop_assert!(selection::kneedle(&values).is_err() == selection::kneedle(&moved).is_err());
        }
    }
}
