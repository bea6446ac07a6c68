#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use tvptvar::tensor::{self, Tensor3};

/// Simulates `t_len` rows after a fixed presample from per-row coefficient
/// tensors (one tensor is reused for every row). Returns presample and
/// simulated rows stacked.
pub fn simulate_rows<R: Rng + ?Sized>(
    coefficients: &[Tensor3],
    omega: &DMatrix<f64>,
    presample: &DMatrix<f64>,
    t_len: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let (p, n) = presample.shape();
    let l = omega.clone().cholesky().expect("Omega SPD").unpack();
    let mut full = DMatrix::zeros(p + t_len, n);
    full.rows_mut(0, p).copy_from(presample);
    for t in 0..t_len {
        let a = tensor::mode1_matricize(&coefficients[if coefficients.len() == 1 { 0 } else { t }]);
        let row = p + t;
        let x = DVector::from_fn(n * p, |k, _| full[(row - 1 - k / n, k % n)]);
        let eps = &l * DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = a * x + eps;
        full.row_mut(row).copy_from(&y.transpose());
    }
    full
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

pub fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    let m = mean(x);
    let denom: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    let num: f64 = x.windows(lag + 1).map(|w| (w[0] - m) * (w[lag] - m)).sum();
    num / denom
}

/// Standard error of the mean of an autocorrelated series by batch means.
pub fn batch_means_se(x: &[f64], batches: usize) -> f64 {
    let size = x.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| mean(&x[b * size..(b + 1) * size])).collect();
    (variance(&means) / batches as f64).sqrt()
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Critical value of the two-sample KS statistic at level 0.01.
pub fn ks_critical_001(n: usize, m: usize) -> f64 {
    1.628 * ((n + m) as f64 / (n * m) as f64).sqrt()
}

pub fn quantile(x: &[f64], q: f64) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}
