//! Linear-Gaussian state-space engine for the time-varying loading.
//!
//! The observation equation is `y_t = Z_t b_t + ε_t`, `ε_t ~ N(0, Ω)`, and the
//! state follows `b_1 ~ N(0, Σ)`, `b_t = b_{t-1} + η_t`, `η_t ~ N(0, Q)` with
//! diagonal `Q`. Stacking all states gives the posterior precision
//!
//! ```text
//! V = Zᵀ (I_T ⊗ Ω)⁻¹ Z + Hᵀ S⁻¹ H,    S = diag(Σ, Q, ..., Q)
//! ```
//!
//! with `H` the first-difference operator. `V` is block tridiagonal with
//! `k x k` blocks, so its Cholesky factor is block lower bidiagonal and costs
//! `O(T k³)`. The same factorization gives an exact joint draw of the state
//! path, `log |V|`, and the quadratic form needed by the integrated
//! likelihood. The sampler used inside the Gibbs sweep is a Kalman-filter
//! simulation smoother with `O(T k² N)` cost; the precision route is kept as
//! an independent check.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dist;
use crate::error::{Error, Result};
use crate::model::Mode;

/// Position of `vec(B)` entry `(i, r)` in the state vector of a loading.
///
/// The predictor loading is stacked as `vec(B₂ᵀ)` (index `r + R i`); the
/// other two use `vec(B)` (index `i + I r`).
#[inline]
pub fn state_index(mode: Mode, rows: usize, rank: usize, i: usize, r: usize) -> usize {
    match mode {
        Mode::Predictor => r + rank * i,
        _ => i + rows * r,
    }
}

/// Loading matrix to its state vector.
pub fn loading_to_state(mode: Mode, b: &DMatrix<f64>) -> DVector<f64> {
    let (rows, rank) = b.shape();
    let mut out = DVector::zeros(rows * rank);
    for r in 0..rank {
        for i in 0..rows {
            out[state_index(mode, rows, rank, i, r)] = b[(i, r)];
        }
    }
    out
}

/// State vector back to the `rows x rank` loading matrix.
pub fn state_to_loading(mode: Mode, rows: usize, rank: usize, s: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(rows, rank, |i, r| s[state_index(mode, rows, rank, i, r)])
}

/// Reorders a per-entry quantity given in `vec(B)` order into state order.
pub fn vec_order_to_state(mode: Mode, rows: usize, rank: usize, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    for r in 0..rank {
        for i in 0..rows {
            out[state_index(mode, rows, rank, i, r)] = v[i + rows * r];
        }
    }
    out
}

/// Inverse of [`vec_order_to_state`].
pub fn state_order_to_vec(mode: Mode, rows: usize, rank: usize, s: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(s.len());
    for r in 0..rank {
        for i in 0..rows {
            out[i + rows * r] = s[state_index(mode, rows, rank, i, r)];
        }
    }
    out
}

/// Design matrix `Z_t` mapping the state of loading `mode` to the conditional
/// mean of `y_t`, given the other two loadings at time `t`.
///
/// `loadings` is `[B1, B2, B3]`; the entry for `mode` is ignored. `lags` is
/// `X_t = (y_{t-1}, ..., y_{t-P})`. For any full loading set,
/// `Z_t · state(B_mode) = A_(1) x_t`.
pub fn build_design(mode: Mode, loadings: [&DMatrix<f64>; 3], lags: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let [b1, b2, b3] = loadings;
    let (n, p) = lags.shape();
    let rank = match mode {
        Mode::Response => b2.ncols(),
        _ => b1.ncols(),
    };
    let check = |m: &DMatrix<f64>, rows: usize, what: &str| -> Result<()> {
        if m.shape() != (rows, rank) {
            return Err(Error::Dimension(format!(
                "{what} is {}x{}, expected {rows}x{rank}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(())
    };
    match mode {
        Mode::Response => {
            check(b2, n, "B2")?;
            check(b3, p, "B3")?;
            // f_r = b2_rᵀ X_t b3_r; Z = fᵀ ⊗ I_N.
            let xb3 = lags * b3;
            let mut z = DMatrix::zeros(n, n * rank);
            for r in 0..rank {
                let f = b2.column(r).dot(&xb3.column(r));
                for i in 0..n {
                    z[(i, i + n * r)] = f;
                }
            }
            Ok(z)
        }
        Mode::Predictor => {
            check(b1, b1.nrows(), "B1")?;
            check(b3, p, "B3")?;
            let g = lags * b3;
            let n1 = b1.nrows();
            Ok(DMatrix::from_fn(n1, n * rank, |i1, k| {
                let (i2, r) = (k / rank, k % rank);
                b1[(i1, r)] * g[(i2, r)]
            }))
        }
        Mode::Temporal => {
            check(b1, b1.nrows(), "B1")?;
            check(b2, n, "B2")?;
            let h = lags.transpose() * b2;
            let n1 = b1.nrows();
            Ok(DMatrix::from_fn(n1, p * rank, |i1, k| {
                let (lag, r) = (k % p, k / p);
                b1[(i1, r)] * h[(lag, r)]
            }))
        }
    }
}

/// A random-walk state-space model with Gaussian noise.
#[derive(Clone, Debug)]
pub struct SsmInstance {
    /// `Z_t`, each `N x k`.
    pub designs: Vec<DMatrix<f64>>,
    pub observations: Vec<DVector<f64>>,
    pub omega: DMatrix<f64>,
    /// Diagonal of `Q`, length `k`, in state order.
    pub q: DVector<f64>,
    /// Covariance `Σ` of the first state.
    pub sigma_init: DMatrix<f64>,
}

impl SsmInstance {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.q.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.omega.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (t, k, n) = (self.len(), self.state_dim(), self.obs_dim());
        if t == 0 {
            return Err(Error::InvalidParameter("state-space model needs observations".into()));
        }
        if self.designs.len() != t {
            return Err(Error::Dimension(format!(
                "{} design matrices for {t} observations",
                self.designs.len()
            )));
        }
        if self.designs.iter().any(|z| z.shape() != (n, k)) {
            return Err(Error::Dimension(format!("design matrices must be {n}x{k}")));
        }
        if self.observations.iter().any(|y| y.len() != n) {
            return Err(Error::Dimension(format!("observations must have length {n}")));
        }
        if self.sigma_init.shape() != (k, k) {
            return Err(Error::Dimension(format!("initial covariance must be {k}x{k}")));
        }
        if self.q.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter("state noise variances must be positive".into()));
        }
        Ok(())
    }
}

/// Block Cholesky factor of the posterior precision `V`, with the forward
/// solve of the linear term already applied.
#[derive(Clone, Debug)]
pub struct PrecisionSystem {
    k: usize,
    /// Lower-triangular diagonal blocks `L_tt`.
    diag: Vec<DMatrix<f64>>,
    /// Sub-diagonal blocks `L_{t+1,t}`.
    sub: Vec<DMatrix<f64>>,
    /// `z = L⁻¹ m`, per time block.
    z: Vec<DVector<f64>>,
    /// `yᵀ (I_T ⊗ Ω)⁻¹ y`.
    yy: f64,
    log_det_omega: f64,
    log_det_q: f64,
    log_det_sigma: f64,
    n: usize,
}

impl PrecisionSystem {
    pub fn new(ssm: &SsmInstance) -> Result<Self> {
        ssm.validate()?;
        let (t_len, k, n) = (ssm.len(), ssm.state_dim(), ssm.obs_dim());

        let omega_chol = dist::cholesky(&ssm.omega, "Omega")?;
        let omega_l = omega_chol.l();
        let log_det_omega = 2.0 * omega_l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let sigma_chol = dist::cholesky(&ssm.sigma_init, "initial state covariance")?;
        let log_det_sigma = 2.0 * sigma_chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let sigma_inv = sigma_chol.inverse();
        let q_inv = ssm.q.map(|v| 1.0 / v);
        let log_det_q = ssm.q.iter().map(|v| v.ln()).sum::<f64>();

        let mut blocks = Vec::with_capacity(t_len);
        let mut rhs = Vec::with_capacity(t_len);
        let mut yy = 0.0;
        for (z, y) in ssm.designs.iter().zip(&ssm.observations) {
            let w = omega_l
                .solve_lower_triangular(z)
                .ok_or_else(|| Error::Numerical("triangular solve with Omega".into()))?;
            let wy = omega_l
                .solve_lower_triangular(y)
                .ok_or_else(|| Error::Numerical("triangular solve with Omega".into()))?;
            yy += wy.norm_squared();
            rhs.push(w.tr_mul(&wy));
            blocks.push(w.tr_mul(&w));
        }

        blocks[0] += &sigma_inv;
        if t_len > 1 {
            for (t, block) in blocks.iter_mut().enumerate() {
                let weight = if t == 0 || t == t_len - 1 { 1.0 } else { 2.0 };
                for i in 0..k {
                    block[(i, i)] += weight * q_inv[i];
                }
            }
        }

        let mut diag: Vec<DMatrix<f64>> = Vec::with_capacity(t_len);
        let mut sub: Vec<DMatrix<f64>> = Vec::with_capacity(t_len.saturating_sub(1));
        let mut z: Vec<DVector<f64>> = Vec::with_capacity(t_len);
        for (t, mut block) in blocks.into_iter().enumerate() {
            let mut m = rhs[t].clone();
            if t > 0 {
                let below = &sub[t - 1];
                block -= below * below.transpose();
                m -= below * &z[t - 1];
            }
            let l = dist::cholesky(&block, "posterior state precision")
                .map_err(|_| Error::NotPositiveDefinite(format!("posterior state precision block {t}")))?
                .unpack();
            let zt = l
                .solve_lower_triangular(&m)
                .ok_or_else(|| Error::Numerical("forward substitution".into()))?;
            if t + 1 < t_len {
                // L_{t+1,t} = E_t L_ttᵀ⁻¹ with E_t = -diag(Q⁻¹).
                let l_inv = l
                    .solve_lower_triangular(&DMatrix::identity(k, k))
                    .ok_or_else(|| Error::Numerical("block inverse".into()))?;
                let mut s = l_inv.transpose();
                for i in 0..k {
                    s.row_mut(i).scale_mut(-q_inv[i]);
                }
                sub.push(s);
            }
            diag.push(l);
            z.push(zt);
        }

        Ok(Self {
            k,
            diag,
            sub,
            z,
            yy,
            log_det_omega,
            log_det_q,
            log_det_sigma,
            n,
        })
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.k
    }

    /// `log |V|` from the factor's diagonal.
    pub fn log_det(&self) -> f64 {
        2.0 * self
            .diag
            .iter()
            .flat_map(|l| l.diagonal().into_iter().copied().collect::<Vec<_>>())
            .map(f64::ln)
            .sum::<f64>()
    }

    /// Solves `Lᵀ x = rhs` block by block.
    fn back_solve(&self, mut rhs: Vec<DVector<f64>>) -> Result<Vec<DVector<f64>>> {
        let t_len = self.len();
        for t in (0..t_len).rev() {
            if t + 1 < t_len {
                let next = rhs[t + 1].clone();
                rhs[t] -= self.sub[t].tr_mul(&next);
            }
            let solved = self.diag[t]
                .tr_solve_lower_triangular(&rhs[t])
                .ok_or_else(|| Error::Numerical("backward substitution".into()))?;
            rhs[t] = solved;
        }
        Ok(rhs)
    }

    /// Posterior mean `V⁻¹ m` of the stacked states.
    pub fn posterior_mean(&self) -> Result<Vec<DVector<f64>>> {
        self.back_solve(self.z.clone())
    }

    /// Exact draw from `N(V⁻¹ m, V⁻¹)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<DVector<f64>>> {
        let rhs = self
            .z
            .iter()
            .map(|z| z + dist::standard_normal_vector(self.k, rng))
            .collect();
        self.back_solve(rhs)
    }

    /// Integrated log-likelihood `log ∫ p(y | b) p(b) db`.
    pub fn marginal_loglik(&self) -> f64 {
        let t = self.len() as f64;
        let quad = self.yy - self.z.iter().map(|z| z.norm_squared()).sum::<f64>();
        -0.5 * t * self.n as f64 * (2.0 * PI).ln()
            - 0.5 * t * self.log_det_omega
            - 0.5 * (t - 1.0) * self.log_det_q
            - 0.5 * self.log_det_sigma
            - 0.5 * self.log_det()
            - 0.5 * quad
    }

    /// Dense copy of the block factor `L` (testing and diagnostics).
    pub fn dense_factor(&self) -> DMatrix<f64> {
        let (t_len, k) = (self.len(), self.k);
        let mut l = DMatrix::zeros(t_len * k, t_len * k);
        for t in 0..t_len {
            l.view_mut((t * k, t * k), (k, k)).copy_from(&self.diag[t]);
            if t + 1 < t_len {
                l.view_mut(((t + 1) * k, t * k), (k, k)).copy_from(&self.sub[t]);
            }
        }
        l
    }
}

/// Exact joint draw of the state path from `p(b_{1:T} | y_{1:T})` through
/// the banded precision factor, `O(T k³)`.
pub fn draw_state_path_precision<R: Rng + ?Sized>(ssm: &SsmInstance, rng: &mut R) -> Result<Vec<DVector<f64>>> {
    PrecisionSystem::new(ssm)?.sample(rng)
}

/// Exact joint draw of the state path from `p(b_{1:T} | y_{1:T})`.
///
/// Simulates states and observations `(b⁺, y⁺)` from the model, then returns
/// `b⁺ + E[b | y - y⁺]`, with the conditional mean from the Kalman filter and
/// the backward state smoother. Costs `O(T k² N)`.
pub fn draw_state_path<R: Rng + ?Sized>(ssm: &SsmInstance, rng: &mut R) -> Result<Vec<DVector<f64>>> {
    ssm.validate()?;
    let (k, n) = (ssm.state_dim(), ssm.obs_dim());
    let sigma_l = dist::cholesky(&ssm.sigma_init, "initial state covariance")?.unpack();
    let omega_l = dist::cholesky(&ssm.omega, "Omega")?.unpack();
    let q_sd = ssm.q.map(f64::sqrt);

    let mut states = Vec::with_capacity(ssm.len());
    let mut residual = Vec::with_capacity(ssm.len());
    let mut b = &sigma_l * dist::standard_normal_vector(k, rng);
    for (t, (z, y)) in ssm.designs.iter().zip(&ssm.observations).enumerate() {
        let y_sim = z * &b + &omega_l * dist::standard_normal_vector(n, rng);
        residual.push(y - y_sim);
        states.push(b.clone());
        if t + 1 < ssm.len() {
            b += q_sd.component_mul(&dist::standard_normal_vector(k, rng));
        }
    }
    let correction = smoothed_states(ssm, &residual)?;
    for (s, c) in states.iter_mut().zip(correction) {
        *s += c;
    }
    Ok(states)
}

/// Posterior mean `E[b_{1:T} | y_{1:T}]` from the Kalman filter and the
/// backward state smoother.
pub fn smoothed_mean(ssm: &SsmInstance) -> Result<Vec<DVector<f64>>> {
    ssm.validate()?;
    smoothed_states(ssm, &ssm.observations)
}

fn smoothed_states(ssm: &SsmInstance, observations: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let (t_len, k) = (ssm.len(), ssm.state_dim());
    let mut a = DVector::<f64>::zeros(k);
    let mut cov = ssm.sigma_init.clone();
    // Per step: F⁻¹ v and the transposed gain Kᵀ = F⁻¹ Z P.
    let mut scaled_innov = Vec::with_capacity(t_len);
    let mut gains = Vec::with_capacity(t_len);
    let n = ssm.obs_dim();
    let mut pz = DMatrix::<f64>::zeros(k, n);
    let mut f = DMatrix::<f64>::zeros(n, n);
    for (t, (z, y)) in ssm.designs.iter().zip(observations).enumerate() {
        cov.mul_to(&z.transpose(), &mut pz);
        f.copy_from(&ssm.omega);
        f.gemm(1.0, z, &pz, 1.0);
        symmetrize_in_place(&mut f);
        let chol = dist::cholesky(&f, "innovation covariance")?;
        let v = y - z * &a;
        let fv = chol.solve(&v);
        let gain_t = chol.solve(&pz.transpose());
        a.gemv(1.0, &pz, &fv, 1.0);
        if t + 1 < t_len {
            cov.gemm(-1.0, &pz, &gain_t, 1.0);
            for i in 0..k {
                cov[(i, i)] += ssm.q[i];
            }
            symmetrize_in_place(&mut cov);
        }
        scaled_innov.push(fv);
        gains.push(gain_t);
    }

    // r[t] collects the information from observations after step t.
    let mut r = vec![DVector::<f64>::zeros(k); t_len + 1];
    for t in (0..t_len).rev() {
        let u = &scaled_innov[t] - &gains[t] * &r[t + 1];
        r[t] = ssm.designs[t].tr_mul(&u) + &r[t + 1];
    }
    let mut out = Vec::with_capacity(t_len);
    let mut mean = &ssm.sigma_init * &r[0];
    out.push(mean.clone());
    for t in 1..t_len {
        mean += ssm.q.component_mul(&r[t]);
        out.push(mean.clone());
    }
    Ok(out)
}

/// Closed-form integrated log-likelihood from the banded precision system.
pub fn marginal_loglik_closed_form(ssm: &SsmInstance) -> Result<f64> {
    Ok(PrecisionSystem::new(ssm)?.marginal_loglik())
}

/// Integrated log-likelihood by the Kalman filter's prediction-error
/// decomposition.
pub fn filter_loglik(ssm: &SsmInstance) -> Result<f64> {
    ssm.validate()?;
    let (k, n) = (ssm.state_dim(), ssm.obs_dim());
    let mut mean = DVector::<f64>::zeros(k);
    let mut cov = ssm.sigma_init.clone();
    let q = DMatrix::from_diagonal(&ssm.q);
    let mut ll = 0.0;
    let t_len = ssm.len();
    for (t, (z, y)) in ssm.designs.iter().zip(&ssm.observations).enumerate() {
        let pz = &cov * z.transpose();
        let f = dist::symmetrize(z * &pz + &ssm.omega);
        let chol = dist::cholesky(&f, "innovation covariance")?;
        let v = y - z * &mean;
        let log_det_f = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let f_inv_v = chol.solve(&v);
        ll -= 0.5 * (n as f64 * (2.0 * PI).ln() + log_det_f + v.dot(&f_inv_v));
        mean += &pz * f_inv_v;
        let gain_t = chol.solve(&pz.transpose());
        cov = dist::symmetrize(&cov - &pz * gain_t);
        if t + 1 < t_len {
            cov += &q;
        }
    }
    Ok(ll)
}

fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in j + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Gaussian log density `log N(y; 0, cov)`.
pub fn gaussian_logpdf(y: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = dist::cholesky(cov, "covariance")?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let quad = y.dot(&chol.solve(y));
    Ok(-0.5 * (y.len() as f64 * (2.0 * PI).ln() + log_det + quad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::RngStream;
    use crate::tensor;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn scalar_design_is_product() {
        let b = |v: f64| DMatrix::from_element(1, 1, v);
        let x = b(1.5);
        let z = build_design(Mode::Response, [&b(9.0), &b(2.0), &b(-3.0)], &x).unwrap();
        assert_eq!(z, b(1.5 * 2.0 * -3.0));
    }

    #[test]
    fn design_reproduces_matricized_tensor() {
        let mut rng = RngStream::new(42, 0);
        let (n, p, r) = (3, 2, 2);
        let loadings = [random_matrix(n, r, &mut rng), random_matrix(n, r, &mut rng), random_matrix(p, r, &mut rng)];
        let lags = random_matrix(n, p, &mut rng);
        let x = DVector::from_column_slice(lags.as_slice());
        let a = tensor::cp_compose(&loadings[0], &loadings[1], &loadings[2]).unwrap();
        let expected = tensor::mode1_matricize(&a) * x;
        for mode in Mode::ALL {
            let z = build_design(mode, [&loadings[0], &loadings[1], &loadings[2]], &lags).unwrap();
            let state = loading_to_state(mode, &loadings[mode.index()]);
            assert!((z * state - &expected).amax() < 1e-10, "{mode:?}");
        }
    }

    #[test]
    fn state_order_round_trip() {
        let b = DMatrix::from_fn(3, 2, |i, r| (10 * i + r) as f64);
        for mode in Mode::ALL {
            let s = loading_to_state(mode, &b);
            assert_eq!(state_to_loading(mode, 3, 2, s.as_slice()), b);
            let v = DVector::from_column_slice(b.as_slice());
            assert_eq!(state_order_to_vec(mode, 3, 2, &vec_order_to_state(mode, 3, 2, &v)), v);
        }
        // vec(B2ᵀ) ordering: row-major walk through B2.
        let s = loading_to_state(Mode::Predictor, &b);
        assert_eq!(s.as_slice(), &[0.0, 1.0, 10.0, 11.0, 20.0, 21.0]);
    }

    #[test]
    fn single_step_likelihoods_match_gaussian_density() {
        let mut rng = RngStream::new(3, 0);
        let (n, k) = (2, 3);
        let z = random_matrix(n, k, &mut rng);
        let sigma = {
            let a = random_matrix(k, k, &mut rng);
            &a * a.transpose() + DMatrix::identity(k, k)
        };
        let omega = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.8]);
        let y = DVector::from_vec(vec![0.4, -1.2]);
        let ssm = SsmInstance {
            designs: vec![z.clone()],
            observations: vec![y.clone()],
            omega: omega.clone(),
            q: DVector::from_element(k, 0.1),
            sigma_init: sigma.clone(),
        };
        let direct = gaussian_logpdf(&y, &(&z * &sigma * z.transpose() + &omega)).unwrap();
        assert!((filter_loglik(&ssm).unwrap() - direct).abs() < 1e-10);
        assert!((marginal_loglik_closed_form(&ssm).unwrap() - direct).abs() < 1e-10);
    }

    #[test]
    fn decoupled_state_gives_noise_density() {
        let omega = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 2.0]);
        let ys: Vec<DVector<f64>> = (0..4).map(|t| DVector::from_vec(vec![t as f64 * 0.3, -0.5])).collect();
        let ssm = SsmInstance {
            designs: vec![DMatrix::zeros(2, 2); 4],
            observations: ys.clone(),
            omega: omega.clone(),
            q: DVector::from_element(2, 0.5),
            sigma_init: DMatrix::identity(2, 2),
        };
        let expected: f64 = ys.iter().map(|y| gaussian_logpdf(y, &omega).unwrap()).sum();
        assert!((filter_loglik(&ssm).unwrap() - expected).abs() < 1e-10);
        assert!((marginal_loglik_closed_form(&ssm).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn invalid_instances() {
        let ssm = SsmInstance {
            designs: vec![DMatrix::zeros(1, 1)],
            observations: vec![DVector::zeros(1)],
            omega: DMatrix::identity(1, 1),
            q: DVector::from_element(1, 0.0),
            sigma_init: DMatrix::identity(1, 1),
        };
        assert!(filter_loglik(&ssm).is_err());
        let ssm = SsmInstance { q: DVector::from_element(1, 1.0), omega: -DMatrix::identity(1, 1), ..ssm };
        assert!(matches!(marginal_loglik_closed_form(&ssm), Err(Error::NotPositiveDefinite(_))));
    }

    fn random_instance(t_len: usize, n: usize, k: usize, rng: &mut RngStream) -> SsmInstance {
        let a = random_matrix(n, n, rng);
        SsmInstance {
            designs: (0..t_len).map(|_| random_matrix(n, k, rng)).collect(),
            observations: (0..t_len).map(|_| random_matrix(n, 1, rng).column(0).into_owned()).collect(),
            omega: &a * a.transpose() + DMatrix::identity(n, n) * 0.5,
            q: DVector::from_fn(k, |i, _| 0.05 + 0.1 * i as f64),
            sigma_init: DMatrix::from_diagonal(&DVector::from_fn(k, |i, _| 1.0 / (i + 1) as f64)),
        }
    }

    #[test]
    fn smoother_mean_matches_precision_mean() {
        let mut rng = RngStream::new(21, 0);
        for (t_len, n, k) in [(1, 2, 3), (2, 1, 1), (7, 3, 4), (40, 2, 6)] {
            let ssm = random_instance(t_len, n, k, &mut rng);
            let a = smoothed_mean(&ssm).unwrap();
            let b = PrecisionSystem::new(&ssm).unwrap().posterior_mean().unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).amax() < 1e-9 * (1.0 + y.amax()), "T={t_len}");
            }
        }
    }

    #[test]
    fn both_samplers_are_reproducible_and_distinct_routes() {
        let mut rng = RngStream::new(22, 0);
        let ssm = random_instance(5, 2, 2, &mut rng);
        let a = draw_state_path(&ssm, &mut RngStream::new(1, 1)).unwrap();
        let b = draw_state_path(&ssm, &mut RngStream::new(1, 1)).unwrap();
        assert_eq!(a, b);
        let c = draw_state_path_precision(&ssm, &mut RngStream::new(1, 1)).unwrap();
        assert_eq!(c.len(), a.len());
    }
}
