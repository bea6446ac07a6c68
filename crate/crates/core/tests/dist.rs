mod common;

use nalgebra::{DMatrix, DVector};
use rand::distr::Distribution;
use statrs::distribution::{ContinuousCDF, Gamma};
use tvptvar::dist::{self, GaussianForm, RngStream};

#[test]
fn covariance_form_moments() {
    let mut rng = RngStream::new(1, 0);
    let cov = DMatrix::identity(2, 2);
    let mean = DVector::zeros(2);
    let draws = 1_000_000;
    let mut s = DMatrix::<f64>::zeros(2, 2);
    for _ in 0..draws {
        let x = dist::sample_mvn(&mean, &cov, GaussianForm::Covariance, &mut rng).unwrap();
        s += &x * x.transpose();
    }
    s /= draws as f64;
    assert!((s[(0, 0)] - 1.0).abs() < 0.01 && (s[(1, 1)] - 1.0).abs() < 0.01);
    assert!(s[(0, 1)].abs() < 0.01);
}

#[test]
fn precision_form_inverts_the_matrix() {
    let mut rng = RngStream::new(2, 0);
    let prec = DMatrix::from_element(1, 1, 4.0);
    let xs: Vec<f64> = (0..200_000)
        .map(|_| dist::sample_mvn(&DVector::zeros(1), &prec, GaussianForm::Precision, &mut rng).unwrap()[0])
        .collect();
    assert!((common::variance(&xs) - 0.25).abs() < 0.005);

    let prec = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
    let cov = prec.clone().try_inverse().unwrap();
    let linear = DVector::from_vec(vec![1.0, -0.5]);
    let mean = &cov * &linear;
    let draws = 200_000;
    let mut m = DVector::zeros(2);
    for _ in 0..draws {
        m += dist::sample_mvn_canonical(&prec, &linear, &mut rng).unwrap();
    }
    m /= draws as f64;
    for i in 0..2 {
        assert!((m[i] - mean[i]).abs() < 4.0 * (cov[(i, i)] / draws as f64).sqrt());
    }
}

#[test]
fn inverse_wishart_means() {
    let mut rng = RngStream::new(3, 0);
    let draws = 100_000;
    let mut m = DMatrix::<f64>::zeros(3, 3);
    for _ in 0..draws {
        m += dist::sample_inverse_wishart(6.0, &DMatrix::identity(3, 3), &mut rng).unwrap();
    }
    m /= draws as f64;
    assert!((m - DMatrix::identity(3, 3) * 0.5).amax() < 0.02);

    let mut m = DMatrix::<f64>::zeros(2, 2);
    for _ in 0..draws {
        let w = dist::sample_inverse_wishart(10.0, &(DMatrix::identity(2, 2) * 2.0), &mut rng).unwrap();
        assert!((&w - w.transpose()).amax() < 1e-12);
        assert!(w.clone().cholesky().is_some());
        m += w;
    }
    m /= draws as f64;
    let target = 2.0 / 7.0;
    assert!((m[(0, 0)] / target - 1.0).abs() < 0.02 && (m[(1, 1)] / target - 1.0).abs() < 0.02);
    assert!(m[(0, 1)].abs() < 0.02 * target);
}

#[test]
fn one_dimensional_inverse_wishart_is_inverse_gamma() {
    let (nu, s) = (7.0, 3.0);
    let mut rng = RngStream::new(4, 0);
    let iw: Vec<f64> = (0..20_000)
        .map(|_| dist::sample_inverse_wishart(nu, &DMatrix::from_element(1, 1, s), &mut rng).unwrap()[(0, 0)])
        .collect();
    let ig: Vec<f64> = (0..20_000)
        .map(|_| dist::sample_inverse_gamma(nu / 2.0, s / 2.0, &mut rng).unwrap())
        .collect();
    let d = common::ks_statistic(&iw, &ig);
    assert!(d < common::ks_critical_001(iw.len(), ig.len()), "KS distance {d}");
}

#[test]
fn inverse_gamma_mean() {
    let mut rng = RngStream::new(5, 0);
    let xs: Vec<f64> = (0..1_000_000)
        .map(|_| dist::sample_inverse_gamma(3.0, 2.0, &mut rng).unwrap())
        .collect();
    assert!((common::mean(&xs) - 1.0).abs() < 0.01);
}

#[test]
fn inverse_gamma_reciprocal_passes_gamma_ks() {
    let (a, b) = (2.5, 1.7);
    let mut rng = RngStream::new(6, 0);
    let mut recip: Vec<f64> = (0..20_000)
        .map(|_| 1.0 / dist::sample_inverse_gamma(a, b, &mut rng).unwrap())
        .collect();
    recip.sort_by(f64::total_cmp);
    let gamma = Gamma::new(a, b).unwrap();
    let n = recip.len() as f64;
    let d = recip
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = gamma.cdf(*x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    // One-sample critical value at 0.01.
    assert!(d < 1.628 / n.sqrt(), "KS distance {d}");
}

#[test]
fn streams_reproduce_bit_for_bit() {
    let a: Vec<u64> = {
        let mut r = RngStream::new(99, 3);
        (0..100).map(|_| rand::RngCore::next_u64(&mut r)).collect()
    };
    let b: Vec<u64> = {
        let mut r = RngStream::new(99, 3);
        (0..100).map(|_| rand::RngCore::next_u64(&mut r)).collect()
    };
    assert_eq!(a, b);
    let normal = rand_distr::StandardNormal;
    let mut r1 = RngStream::new(99, 3);
    let mut r2 = RngStream::new(99, 4);
    let x: f64 = normal.sample(&mut r1);
    let y: f64 = normal.sample(&mut r2);
    assert_ne!(x, y);
}
