use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DMatrix;
use tvptvar::dist::RngStream;
use tvptvar::{io, model, tensor};

fn tvptvar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvptvar")).args(args).output().expect("spawn tvptvar")
}

fn ok(args: &[&str]) -> String {
    let out = tvptvar(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_is_byte_identical_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["simulate", "--sim-n", "3", "--sim-p", "2", "--sim-j", "2", "--sim-rank", "2", "--sim-t-len", "80", "--datasets", "3", "--seed", "11", "-o", path_str(out)]);
    }
    for d in 0..3 {
        for name in [format!("dataset_{d:03}.csv"), format!("truth_{d:03}.json")] {
            assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name}");
        }
    }
    let (header, data) = io::read_matrix_csv_path(&a.join("dataset_000.csv")).unwrap();
    assert_eq!(header, ["y1", "y2", "y3"]);
    assert_eq!(data.shape(), (80, 3));

    let c = dir.path().join("c");
    ok(&["simulate", "--sim-n", "3", "--sim-p", "2", "--sim-j", "2", "--sim-rank", "2", "--sim-t-len", "80", "--datasets", "3", "--seed", "12", "-o", path_str(&c)]);
    assert_ne!(fs::read(a.join("dataset_000.csv")).unwrap(), fs::read(c.join("dataset_000.csv")).unwrap());
}

#[test]
fn manifest_replays_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    ok(&["simulate", "--sim-j", "3", "--sim-t-len", "60", "--seed", "4", "-o", path_str(&first)]);
    let manifest = first.join("manifest.json");
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert!(m["outputs"].as_array().unwrap().iter().any(|o| o == "dataset_000.csv"));

    let second = dir.path().join("second");
    ok(&["simulate", "--config", path_str(&manifest), "-o", path_str(&second)]);
    assert_eq!(
        fs::read(first.join("dataset_000.csv")).unwrap(),
        fs::read(second.join("dataset_000.csv")).unwrap()
    );
}

#[test]
fn replaying_reference_grid_gives_known_knees() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/reference_dic_grid.csv");
    let stdout = ok(&["select", "--replay", path_str(&grid), "-o", path_str(dir.path())]);
    assert!(stdout.contains("TVAR(4): knee rank 5"), "{stdout}");
    let mut rdr = csv::Reader::from_path(dir.path().join("knees.csv")).unwrap();
    let knees: Vec<(String, usize)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[1].parse().unwrap())
        })
        .collect();
    let expected = [("TVAR(4)", 5), ("TVP-TVAR(4,1)", 6), ("TVP-TVAR(4,2)", 5), ("TVP-TVAR(4,3)", 5)];
    assert_eq!(knees.len(), 4);
    for ((label, knee), (el, ek)) in knees.iter().zip(expected) {
        assert_eq!((label.as_str(), *knee), (el, ek));
    }
}

#[test]
fn standardize_examples() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.csv");
    fs::write(&input, "a,b\n1,10\n2,10.5\n3,12\n").unwrap();
    let out = dir.path().join("out");
    ok(&["standardize", "--data", path_str(&input), "-o", path_str(&out)]);
    let (header, z) = io::read_matrix_csv_path(&out.join("standardized.csv")).unwrap();
    assert_eq!(header, ["a", "b"]);
    for (got, want) in z.column(0).iter().zip([-1.0, 0.0, 1.0]) {
        assert!((got - want).abs() < 1e-12);
    }
    for col in z.column_iter() {
        let m = col.sum() / 3.0;
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 2.0).sqrt();
        assert!(m.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
    }
    let t: io::Standardization = serde_json::from_str(&fs::read_to_string(out.join("standardization.json")).unwrap()).unwrap();
    assert_eq!(t.mean[0], 2.0);
    assert_eq!(t.sd[0], 1.0);

    // Already standardized input passes through unchanged.
    let again = dir.path().join("again");
    ok(&["standardize", "--data", path_str(&out.join("standardized.csv")), "-o", path_str(&again)]);
    let (_, z2) = io::read_matrix_csv_path(&again.join("standardized.csv")).unwrap();
    assert!((z2 - z).amax() < 1e-12);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{\n  \"seed\": 3,\n  \"n_chain\": 2\n}\n").unwrap();
    let out = tvptvar(&["fit", "--config", path_str(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":3:"));

    assert_eq!(tvptvar(&["fit", "--n-iter", "many"]).status.code(), Some(2));
    assert_eq!(tvptvar(&["fit", "--data", "/definitely/missing.csv"]).status.code(), Some(2));

    let constant = dir.path().join("const.csv");
    fs::write(&constant, "y1,y2\n1,2\n1,3\n1,4\n").unwrap();
    let out = tvptvar(&["standardize", "--data", path_str(&constant), "-o", path_str(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));

    let data = dir.path().join("d.csv");
    fs::write(&data, "y1\n0.1\n0.3\n-0.2\n0.5\n0.0\n").unwrap();
    let out = tvptvar(&["fit", "--data", path_str(&data), "--j", "1", "--ranks", "1", "--n-iter", "10", "--burn-in", "10"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("huge.csv");
    let mut text = String::from("y1,y2\n");
    let mut rng = RngStream::new(1, 0);
    for _ in 0..40 {
        let (a, b): (f64, f64) = (rand_sample(&mut rng), rand_sample(&mut rng));
        text.push_str(&format!("{:e},{:e}\n", a * 1e155, b * 1e155));
    }
    fs::write(&data, text).unwrap();
    let out = tvptvar(&["fit", "--data", path_str(&data), "--j", "1", "--ranks", "1", "--n-iter", "20", "--burn-in", "5", "-o", path_str(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

fn rand_sample(rng: &mut RngStream) -> f64 {
    use rand::Rng;
    rng.random_range(-1.0..1.0)
}

/// Four series on a directed cycle with lag-1 weight 0.5, written as a
/// rank-4 CP whose response loading carries the adjacency.
fn planted_series(t_len: usize) -> (DMatrix<f64>, Vec<(usize, usize)>) {
    let n = 4;
    let edges: Vec<(usize, usize)> = (0..n).map(|m| (m, (m + 1) % n)).collect();
    let mut b1 = DMatrix::zeros(n, n);
    for &(from, to) in &edges {
        b1[(to, from)] = 0.5;
    }
    let a = tensor::cp_compose(&b1, &DMatrix::identity(n, n), &DMatrix::from_element(1, n, 1.0)).unwrap();
    let omega = DMatrix::identity(n, n) * 0.5;
    let data = model::simulate_series(std::slice::from_ref(&a), &omega, t_len, &mut RngStream::new(21, 0)).unwrap();
    (data, edges)
}

#[test]
fn fit_then_granger_recovers_planted_network() {
    let dir = tempfile::tempdir().unwrap();
    let (data, edges) = planted_series(400);
    let data_path = dir.path().join("planted.csv");
    io::write_matrix_csv_path(&data_path, &io::default_header(4), &data).unwrap();
    let fit_dir = dir.path().join("fit");
    ok(&[
        "fit", "--data", path_str(&data_path), "-p", "1", "--j", "1", "--ranks", "4", "--n-iter", "1500", "--burn-in", "500",
        "--n-chains", "2", "--seed", "3", "--dump-draws", "-o", path_str(&fit_dir),
    ]);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(fit_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["label"], "TVP-TVAR(1,1)");
    assert_eq!(summary["chains"].as_array().unwrap().len(), 2);

    let gc_dir = dir.path().join("gc");
    ok(&["granger", "--fit-dir", path_str(&fit_dir), "--dot-times", "0,100", "-o", path_str(&gc_dir)]);
    let t_len = 399;
    let mut detected = vec![false; t_len * 16];
    let mut rdr = csv::Reader::from_path(gc_dir.join("edges.csv")).unwrap();
    for r in rdr.records() {
        let r = r.unwrap();
        let (t, from, to): (usize, usize, usize) = (r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].parse().unwrap());
        detected[t * 16 + (from - 1) * 4 + (to - 1)] = true;
    }
    let mut agree = 0;
    let mut cells = 0;
    for t in 0..t_len {
        for from in 0..4 {
            for to in (0..4).filter(|&to| to != from) {
                cells += 1;
                agree += usize::from(detected[t * 16 + from * 4 + to] == edges.contains(&(from, to)));
            }
        }
    }
    let rate = agree as f64 / cells as f64;
    assert!(rate >= 0.9, "agreement {rate}");
    assert!(fs::read_to_string(gc_dir.join("network_t100.dot")).unwrap().starts_with("digraph"));
    let counts = fs::read_to_string(gc_dir.join("counts.csv")).unwrap();
    assert_eq!(counts.lines().count(), t_len + 1);

    // The cube recomputed from the binary dumps at the fit's delta is identical.
    let re_dir = dir.path().join("re");
    ok(&["granger", "--fit-dir", path_str(&fit_dir), "--delta", "0.01", "-o", path_str(&re_dir)]);
    assert_eq!(fs::read(gc_dir.join("edges.csv")).unwrap(), fs::read(re_dir.join("edges.csv")).unwrap());
}
