//! Gibbs sampler for TVAR(P) and TVP-TVAR(P, j).
//!
//! One sweep for a time-varying configuration:
//!
//! 1. the path of the time-varying loading, jointly, from the linear-Gaussian
//!    state-space model it induces;
//! 2. each time-invariant loading from its Gaussian full conditional;
//! 3. Ω from its inverse-Wishart full conditional;
//! 4. each random-walk variance from its inverse-gamma full conditional.
//!
//! TVAR skips steps 1 and 4 and cycles through all three loadings in step 2.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{self, RngStream};
use crate::error::{Error, Result};
use crate::granger::GcAccumulator;
use crate::model::{self, LaggedData, Mode, ModelConfig, PriorSpec};
use crate::state_space::{self, SsmInstance};
use crate::tensor::{self, Tensor3};

/// Shape of the inverse-gamma full conditional of each random-walk variance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QShapeRule {
    /// `a + T/2`.
    #[default]
    HalfLength,
    /// `a + (T - 1)/2`, one half per increment.
    HalfIncrements,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcSettings {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub q_shape: QShapeRule,
    /// Evaluate the integrated likelihood at every stored draw (needed for
    /// the marginal DIC; costs one extra banded factorization per draw).
    pub track_marginal: bool,
    /// Accumulate Granger-causality indicators at this threshold.
    pub granger_delta: Option<f64>,
    /// Keep every stored draw in memory.
    pub keep_draws: bool,
    /// Modelled time index whose coefficients and time-varying loading are
    /// traced per draw; defaults to the middle of the series.
    pub trace_time: Option<usize>,
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self {
            n_iter: 10_000,
            burn_in: 1_000,
            thin: 1,
            q_shape: QShapeRule::HalfLength,
            track_marginal: false,
            granger_delta: None,
            keep_draws: false,
            trace_time: None,
        }
    }
}

impl McmcSettings {
    pub fn new(n_iter: usize, burn_in: usize, thin: usize) -> Self {
        Self {
            n_iter,
            burn_in,
            thin,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::InvalidParameter("thin must be at least 1".into()));
        }
        if self.burn_in >= self.n_iter {
            return Err(Error::InvalidParameter(format!(
                "burn-in {} leaves no draws out of {} iterations",
                self.burn_in, self.n_iter
            )));
        }
        if self.stored_draws() == 0 {
            return Err(Error::InvalidParameter("thinning leaves no stored draws".into()));
        }
        Ok(())
    }

    /// `(n_iter - burn_in) / thin`.
    pub fn stored_draws(&self) -> usize {
        self.n_iter.saturating_sub(self.burn_in) / self.thin
    }

    fn stores(&self, iteration: usize) -> bool {
        iteration >= self.burn_in && (iteration - self.burn_in + 1).is_multiple_of(self.thin)
    }
}

/// Current values of every sampled block.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    /// Mode of the time-varying loading, if any.
    pub varying: Option<Mode>,
    /// `[B1, B2, B3]`. The entry of the time-varying loading is unused by
    /// the sampler and mirrors the first element of `path`.
    pub loadings: [DMatrix<f64>; 3],
    /// Time-varying loading per modelled time point.
    pub path: Option<Vec<DMatrix<f64>>>,
    pub omega: DMatrix<f64>,
    /// Random-walk variances in `vec(B_j)` order; empty for TVAR.
    pub q: DVector<f64>,
}

impl ChainState {
    pub fn loadings_at(&self, t: usize) -> [&DMatrix<f64>; 3] {
        let mut out = [&self.loadings[0], &self.loadings[1], &self.loadings[2]];
        if let (Some(path), Some(mode)) = (&self.path, self.varying) {
            out[mode.index()] = &path[t];
        }
        out
    }

    /// Coefficient tensor per modelled time point (one tensor for TVAR).
    pub fn coefficients(&self, t_len: usize) -> Vec<Tensor3> {
        match &self.path {
            None => vec![tensor::compose_unchecked(&self.loadings[0], &self.loadings[1], &self.loadings[2])],
            Some(_) => (0..t_len)
                .map(|t| {
                    let [b1, b2, b3] = self.loadings_at(t);
                    tensor::compose_unchecked(b1, b2, b3)
                })
                .collect(),
        }
    }

    pub fn validate(&self, cfg: &ModelConfig, t_len: usize) -> Result<()> {
        for mode in Mode::ALL {
            let b = &self.loadings[mode.index()];
            if b.shape() != (cfg.rows(mode), cfg.rank) {
                return Err(Error::Dimension(format!("loading {} has shape {:?}", mode.number(), b.shape())));
            }
        }
        if self.varying != cfg.varying {
            return Err(Error::InvalidParameter("state does not match configuration".into()));
        }
        match (cfg.varying, &self.path) {
            (None, None) => {}
            (Some(mode), Some(path)) => {
                if path.len() != t_len || path.iter().any(|b| b.shape() != (cfg.rows(mode), cfg.rank)) {
                    return Err(Error::Dimension("time-varying loading path has wrong shape".into()));
                }
                if self.q.len() != cfg.block_len(mode) || self.q.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::InvalidParameter("random-walk variances must be positive".into()));
                }
            }
            _ => return Err(Error::InvalidParameter("state does not match configuration".into())),
        }
        if self.omega.shape() != (cfg.n, cfg.n) {
            return Err(Error::Dimension("Omega has wrong shape".into()));
        }
        Ok(())
    }
}

/// Sum over modelled time points of `log N(y_t; A_(1),t x_t, Ω)`.
pub fn conditional_loglik(coefficients: &[Tensor3], omega: &DMatrix<f64>, data: &LaggedData) -> Result<f64> {
    let chol = dist::cholesky(omega, "Omega")?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let l = chol.l();
    let mut quad = 0.0;
    for t in 0..data.len() {
        let a = if coefficients.len() == 1 { &coefficients[0] } else { &coefficients[t] };
        let resid = &data.targets[t] - tensor::mode1_matricize(a) * data.x(t);
        let w = l
            .solve_lower_triangular(&resid)
            .ok_or_else(|| Error::Numerical("triangular solve with Omega".into()))?;
        quad += w.norm_squared();
    }
    let t = data.len() as f64;
    Ok(-0.5 * (t * data.n as f64 * (2.0 * PI).ln() + t * log_det + quad))
}

/// The state-space model for the time-varying loading given the static
/// loadings, Ω and Q (in `vec(B_j)` order).
pub fn tv_state_space(
    cfg: &ModelConfig,
    priors: &PriorSpec,
    data: &LaggedData,
    loadings: &[DMatrix<f64>; 3],
    omega: &DMatrix<f64>,
    q: &DVector<f64>,
) -> Result<SsmInstance> {
    let mode = cfg
        .varying
        .ok_or_else(|| Error::InvalidParameter("TVAR has no time-varying loading".into()))?;
    let rows = cfg.rows(mode);
    let parts = [&loadings[0], &loadings[1], &loadings[2]];
    let designs = data
        .lags
        .iter()
        .map(|x| state_space::build_design(mode, parts, x))
        .collect::<Result<Vec<_>>>()?;
    let prior = model::prior_variances(mode, cfg, priors.sigma2);
    Ok(SsmInstance {
        designs,
        observations: data.targets.clone(),
        omega: omega.clone(),
        q: state_space::vec_order_to_state(mode, rows, cfg.rank, q),
        sigma_init: DMatrix::from_diagonal(&state_space::vec_order_to_state(mode, rows, cfg.rank, &prior)),
    })
}

/// `log p(y | static loadings, Q, Ω)` with the time-varying path integrated out.
pub fn integrated_loglik(
    cfg: &ModelConfig,
    priors: &PriorSpec,
    data: &LaggedData,
    loadings: &[DMatrix<f64>; 3],
    omega: &DMatrix<f64>,
    q: &DVector<f64>,
) -> Result<f64> {
    state_space::marginal_loglik_closed_form(&tv_state_space(cfg, priors, data, loadings, omega, q)?)
}

/// Starting point: loadings and the first state from their priors, the path
/// as a random walk with the initial variances, Ω at its prior mean and each
/// variance at the inverse-gamma mode `b / (a + 1)`.
pub fn initial_state<R: Rng + ?Sized>(
    cfg: &ModelConfig,
    priors: &PriorSpec,
    t_len: usize,
    rng: &mut R,
) -> ChainState {
    let mut loadings = model::draw_prior_loadings(cfg, priors.sigma2, rng);
    let omega = priors.omega_prior_mean().unwrap_or_else(|| &priors.scale / priors.nu);
    let (path, q) = match cfg.varying {
        None => (None, DVector::zeros(0)),
        Some(mode) => {
            let q = DVector::from_element(cfg.block_len(mode), priors.ig_scale / (priors.ig_shape + 1.0));
            let rows = cfg.rows(mode);
            let mut current = loadings[mode.index()].clone();
            let mut path = Vec::with_capacity(t_len);
            path.push(current.clone());
            for _ in 1..t_len {
                for k in 0..current.len() {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    current[(k % rows, k / rows)] += q[k].sqrt() * z;
                }
                path.push(current.clone());
            }
            loadings[mode.index()] = path[0].clone();
            (Some(path), q)
        }
    };
    ChainState {
        varying: cfg.varying,
        loadings,
        path,
        omega,
        q,
    }
}

/// Step 1: joint draw of the time-varying loading path.
pub fn step_tv_path<R: Rng + ?Sized>(
    state: &mut ChainState,
    data: &LaggedData,
    cfg: &ModelConfig,
    priors: &PriorSpec,
    rng: &mut R,
) -> Result<()> {
    let mode = cfg
        .varying
        .ok_or_else(|| Error::InvalidParameter("TVAR has no time-varying loading".into()))?;
    let ssm = tv_state_space(cfg, priors, data, &state.loadings, &state.omega, &state.q)?;
    let draws = state_space::draw_state_path(&ssm, rng)?;
    let rows = cfg.rows(mode);
    let path: Vec<DMatrix<f64>> = draws
        .iter()
        .map(|s| state_space::state_to_loading(mode, rows, cfg.rank, s.as_slice()))
        .collect();
    state.loadings[mode.index()] = path[0].clone();
    state.path = Some(path);
    Ok(())
}

/// Step 2: each time-invariant loading from its Gaussian full conditional,
/// with the time-varying loading entering the design at its time-`t` value.
pub fn step_static_loadings<R: Rng + ?Sized>(
    state: &mut ChainState,
    data: &LaggedData,
    cfg: &ModelConfig,
    priors: &PriorSpec,
    rng: &mut R,
) -> Result<()> {
    let omega_inv = dist::cholesky(&state.omega, "Omega")?.inverse();
    for mode in cfg.static_modes() {
        update_loading(mode, state, data, cfg, priors, &omega_inv, rng)?;
    }
    Ok(())
}

/// Precision and linear term `(Σ⁻¹ + Σ_t Zᵀ Ω⁻¹ Z, Σ_t Zᵀ Ω⁻¹ y_t)` of one
/// time-invariant loading's full conditional, in state ordering.
pub fn loading_conditional(
    mode: Mode,
    state: &ChainState,
    data: &LaggedData,
    cfg: &ModelConfig,
    priors: &PriorSpec,
    omega_inv: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if cfg.varying == Some(mode) {
        return Err(Error::InvalidParameter(format!("loading {} is time-varying", mode.number())));
    }
    let rows = cfg.rows(mode);
    let prior = state_space::vec_order_to_state(mode, rows, cfg.rank, &model::prior_variances(mode, cfg, priors.sigma2));
    let mut precision = DMatrix::from_diagonal(&prior.map(|v| 1.0 / v));
    let mut linear = DVector::zeros(prior.len());
    for t in 0..data.len() {
        let z = state_space::build_design(mode, state.loadings_at(t), &data.lags[t])?;
        let zt_oinv = z.transpose() * omega_inv;
        precision += &zt_oinv * &z;
        linear += &zt_oinv * &data.targets[t];
    }
    Ok((dist::symmetrize(precision), linear))
}

/// Draws one time-invariant loading from its full conditional.
pub fn update_loading<R: Rng + ?Sized>(
    mode: Mode,
    state: &mut ChainState,
    data: &LaggedData,
    cfg: &ModelConfig,
    priors: &PriorSpec,
    omega_inv: &DMatrix<f64>,
    rng: &mut R,
) -> Result<()> {
    let (precision, linear) = loading_conditional(mode, state, data, cfg, priors, omega_inv)?;
    let draw = dist::sample_mvn_canonical(&precision, &linear, rng).map_err(|e| match e {
        Error::NotPositiveDefinite(_) => {
            Error::NotPositiveDefinite(format!("posterior precision of loading {}", mode.number()))
        }
        other => other,
    })?;
    let rows = cfg.rows(mode);
    state.loadings[mode.index()] = state_space::state_to_loading(mode, rows, cfg.rank, draw.as_slice());
    Ok(())
}

/// Step 3: Ω from `IW(T + ν, S + Σ_t r_t r_tᵀ)`.
pub fn step_omega<R: Rng + ?Sized>(
    state: &mut ChainState,
    data: &LaggedData,
    cfg: &ModelConfig,
    priors: &PriorSpec,
    rng: &mut R,
) -> Result<()> {
    let coefficients = state.coefficients(data.len());
    let mut scatter = priors.scale.clone();
    for t in 0..data.len() {
        let a = if coefficients.len() == 1 { &coefficients[0] } else { &coefficients[t] };
        let r = &data.targets[t] - tensor::mode1_matricize(a) * data.x(t);
        scatter += &r * r.transpose();
    }
    debug_assert_eq!(scatter.nrows(), cfg.n);
    state.omega = dist::sample_inverse_wishart(data.len() as f64 + priors.nu, &scatter, rng)?;
    Ok(())
}

/// Step 4: each random-walk variance from its inverse-gamma full conditional.
pub fn step_q<R: Rng + ?Sized>(
    state: &mut ChainState,
    cfg: &ModelConfig,
    priors: &PriorSpec,
    rule: QShapeRule,
    rng: &mut R,
) -> Result<()> {
    let path = state
        .path
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("TVAR has no random-walk variances".into()))?;
    let t_len = path.len() as f64;
    let shape = priors.ig_shape
        + match rule {
            QShapeRule::HalfLength => t_len / 2.0,
            QShapeRule::HalfIncrements => (t_len - 1.0) / 2.0,
        };
    let k = state.q.len();
    let mut ss = vec![0.0; k];
    for w in path.windows(2) {
        for (i, s) in ss.iter_mut().enumerate() {
            let d = w[1].as_slice()[i] - w[0].as_slice()[i];
            *s += d * d;
        }
    }
    debug_assert_eq!(k, cfg.varying.map_or(0, |m| cfg.block_len(m)));
    for (i, s) in ss.into_iter().enumerate() {
        state.q[i] = dist::sample_inverse_gamma(shape, priors.ig_scale + 0.5 * s, rng)?;
    }
    Ok(())
}

/// One full sweep in the fixed step order.
pub fn sweep<R: Rng + ?Sized>(
    state: &mut ChainState,
    data: &LaggedData,
    cfg: &ModelConfig,
    priors: &PriorSpec,
    rule: QShapeRule,
    rng: &mut R,
) -> Result<()> {
    if cfg.varying.is_some() {
        step_tv_path(state, data, cfg, priors, rng)?;
    }
    step_static_loadings(state, data, cfg, priors, rng)?;
    step_omega(state, data, cfg, priors, rng)?;
    if cfg.varying.is_some() {
        step_q(state, cfg, priors, rule, rng)?;
    }
    Ok(())
}

/// Per-draw record of low-dimensional quantities.
#[derive(Clone, Debug, PartialEq)]
pub struct DrawTrace {
    /// `[B1, B2, B3]`, the time-varying one taken at the trace time.
    pub loadings: [DMatrix<f64>; 3],
    pub omega: DMatrix<f64>,
    pub q: DVector<f64>,
    /// Coefficient tensor at the trace time.
    pub coefficient: Tensor3,
    pub loglik: f64,
    pub marginal_loglik: Option<f64>,
}

/// Stored output of one chain: running sums for the DIC variants, per-draw
/// traces and optional Granger counts or full draws.
#[derive(Clone, Debug)]
pub struct ChainDraws {
    pub config: ModelConfig,
    pub settings: McmcSettings,
    pub seed: u64,
    pub stream: u64,
    /// Number of modelled time points.
    pub t_len: usize,
    pub trace_time: usize,
    pub n_draws: usize,
    loglik_sum: f64,
    marginal_sum: f64,
    coef_sum: Vec<Tensor3>,
    omega_sum: DMatrix<f64>,
    q_sum: DVector<f64>,
    loading_sum: [DMatrix<f64>; 3],
    path_sum: Option<Vec<DMatrix<f64>>>,
    pub trace: Vec<DrawTrace>,
    pub granger: Option<GcAccumulator>,
    pub draws: Option<Vec<ChainState>>,
    pub elapsed_secs: f64,
}

impl ChainDraws {
    pub fn new(cfg: &ModelConfig, settings: &McmcSettings, t_len: usize, seed: u64, stream: u64) -> Result<Self> {
        let trace_time = settings.trace_time.unwrap_or(t_len / 2);
        if trace_time >= t_len {
            return Err(Error::InvalidParameter(format!(
                "trace time {trace_time} outside 0..{t_len}"
            )));
        }
        let zero_tensor = Tensor3::zeros(cfg.tensor_dims())?;
        let granger = settings
            .granger_delta
            .map(|d| GcAccumulator::new(d, cfg.n, t_len))
            .transpose()?;
        Ok(Self {
            config: *cfg,
            settings: settings.clone(),
            seed,
            stream,
            t_len,
            trace_time,
            n_draws: 0,
            loglik_sum: 0.0,
            marginal_sum: 0.0,
            coef_sum: vec![zero_tensor; t_len],
            omega_sum: DMatrix::zeros(cfg.n, cfg.n),
            q_sum: DVector::zeros(cfg.varying.map_or(0, |m| cfg.block_len(m))),
            loading_sum: Mode::ALL.map(|m| DMatrix::zeros(cfg.rows(m), cfg.rank)),
            path_sum: cfg
                .varying
                .map(|m| vec![DMatrix::zeros(cfg.rows(m), cfg.rank); t_len]),
            trace: Vec::new(),
            granger,
            draws: settings.keep_draws.then(Vec::new),
            elapsed_secs: 0.0,
        })
    }

    /// Adds one posterior draw to every accumulator.
    pub fn record(&mut self, state: &ChainState, data: &LaggedData, priors: &PriorSpec) -> Result<()> {
        let cfg = self.config;
        let coefficients = state.coefficients(self.t_len);
        let loglik = conditional_loglik(&coefficients, &state.omega, data)?;
        let marginal = if self.settings.track_marginal && cfg.varying.is_some() {
            Some(integrated_loglik(&cfg, priors, data, &state.loadings, &state.omega, &state.q)?)
        } else {
            None
        };

        self.loglik_sum += loglik;
        self.marginal_sum += marginal.unwrap_or(0.0);
        for (t, acc) in self.coef_sum.iter_mut().enumerate() {
            let a = if coefficients.len() == 1 { &coefficients[0] } else { &coefficients[t] };
            acc.axpy(1.0, a)?;
        }
        self.omega_sum += &state.omega;
        if !self.q_sum.is_empty() {
            self.q_sum += &state.q;
        }
        for m in cfg.static_modes() {
            self.loading_sum[m.index()] += &state.loadings[m.index()];
        }
        if let (Some(sum), Some(path)) = (&mut self.path_sum, &state.path) {
            for (s, b) in sum.iter_mut().zip(path) {
                *s += b;
            }
        }
        if let Some(acc) = &mut self.granger {
            acc.add_draw(&coefficients)?;
        }
        let traced = state.loadings_at(self.trace_time);
        self.trace.push(DrawTrace {
            loadings: [traced[0].clone(), traced[1].clone(), traced[2].clone()],
            omega: state.omega.clone(),
            q: state.q.clone(),
            coefficient: coefficients[if coefficients.len() == 1 { 0 } else { self.trace_time }].clone(),
            loglik,
            marginal_loglik: marginal,
        });
        if let Some(draws) = &mut self.draws {
            draws.push(state.clone());
        }
        self.n_draws += 1;
        Ok(())
    }

    fn require_draws(&self) -> Result<f64> {
        if self.n_draws == 0 {
            return Err(Error::MissingData("chain has no stored draws".into()));
        }
        Ok(self.n_draws as f64)
    }

    /// Posterior mean of the conditional log-likelihood.
    pub fn mean_loglik(&self) -> Result<f64> {
        Ok(self.loglik_sum / self.require_draws()?)
    }

    /// Posterior mean of the integrated log-likelihood, when tracked.
    pub fn mean_marginal_loglik(&self) -> Result<f64> {
        let n = self.require_draws()?;
        if !(self.settings.track_marginal && self.config.varying.is_some()) {
            return Err(Error::MissingData("integrated likelihood was not tracked".into()));
        }
        Ok(self.marginal_sum / n)
    }

    /// Posterior mean of the coefficient tensor at each modelled time point.
    pub fn coefficient_means(&self) -> Result<Vec<Tensor3>> {
        let n = self.require_draws()?;
        Ok(self
            .coef_sum
            .iter()
            .map(|a| {
                let mut a = a.clone();
                a.scale(1.0 / n);
                a
            })
            .collect())
    }

    pub fn omega_mean(&self) -> Result<DMatrix<f64>> {
        Ok(&self.omega_sum / self.require_draws()?)
    }

    pub fn q_mean(&self) -> Result<DVector<f64>> {
        Ok(&self.q_sum / self.require_draws()?)
    }

    /// Posterior means of the static loadings; the entry of the time-varying
    /// loading holds the mean at the first time point.
    pub fn loading_means(&self) -> Result<[DMatrix<f64>; 3]> {
        let n = self.require_draws()?;
        let mut out = self.loading_sum.clone().map(|b| b / n);
        if let (Some(mode), Some(path)) = (self.config.varying, &self.path_sum) {
            out[mode.index()] = &path[0] / n;
        }
        Ok(out)
    }

    /// Posterior means of the time-varying loading per time point.
    pub fn path_means(&self) -> Result<Option<Vec<DMatrix<f64>>>> {
        let n = self.require_draws()?;
        Ok(self.path_sum.as_ref().map(|p| p.iter().map(|b| b / n).collect()))
    }
}

/// Runs one chain from a prior-drawn starting point.
pub fn run_chain(
    data: &LaggedData,
    cfg: &ModelConfig,
    priors: &PriorSpec,
    settings: &McmcSettings,
    rng: &mut RngStream,
) -> Result<ChainDraws> {
    let init = initial_state(cfg, priors, data.len(), rng);
    run_chain_from(init, data, cfg, priors, settings, rng)
}

/// Runs one chain from an explicit starting point.
pub fn run_chain_from(
    mut state: ChainState,
    data: &LaggedData,
    cfg: &ModelConfig,
    priors: &PriorSpec,
    settings: &McmcSettings,
    rng: &mut RngStream,
) -> Result<ChainDraws> {
    let start = Instant::now();
    cfg.validate()?;
    priors.validate(cfg.n)?;
    settings.validate()?;
    if data.n != cfg.n || data.p != cfg.p {
        return Err(Error::Dimension(format!(
            "data has N = {}, P = {} but the configuration has N = {}, P = {}",
            data.n, data.p, cfg.n, cfg.p
        )));
    }
    state.validate(cfg, data.len())?;
    let mut draws = ChainDraws::new(cfg, settings, data.len(), rng.seed(), rng.stream())?;
    for it in 0..settings.n_iter {
        sweep(&mut state, data, cfg, priors, settings.q_shape, rng)
            .map_err(|e| chain_failure(e, cfg, rng.stream(), it))?;
        if settings.stores(it) {
            draws
                .record(&state, data, priors)
                .map_err(|e| chain_failure(e, cfg, rng.stream(), it))?;
        }
    }
    draws.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(draws)
}

fn chain_failure(e: Error, cfg: &ModelConfig, stream: u64, it: usize) -> Error {
    let ctx = format!("{cfg}, chain {stream}, iteration {it}");
    match e {
        Error::NotPositiveDefinite(m) => Error::NotPositiveDefinite(format!("{m} ({ctx})")),
        Error::Numerical(m) => Error::Numerical(format!("{m} ({ctx})")),
        other => other,
    }
}

/// Runs `n_chains` independent chains; chain `k` uses stream `k` of
/// `master_seed`. Results are ordered by chain id.
pub fn run_parallel_chains(
    data: &LaggedData,
    cfg: &ModelConfig,
    priors: &PriorSpec,
    settings: &McmcSettings,
    n_chains: usize,
    master_seed: u64,
) -> Result<Vec<ChainDraws>> {
    if n_chains == 0 {
        return Err(Error::InvalidParameter("need at least one chain".into()));
    }
    let results: Vec<Result<ChainDraws>> = (0..n_chains as u64)
        .into_par_iter()
        .map(|k| run_chain(data, cfg, priors, settings, &mut RngStream::new(master_seed, k)))
        .collect();
    let mut failures = Vec::new();
    let mut chains = Vec::with_capacity(n_chains);
    let mut numerical = true;
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(c) => chains.push(c),
            Err(e) => {
                numerical &= e.is_numerical();
                failures.push(format!("chain {k}: {e}"));
            }
        }
    }
    if failures.is_empty() {
        Ok(chains)
    } else if numerical {
        Err(Error::Numerical(failures.join("; ")))
    } else {
        Err(Error::InvalidParameter(failures.join("; ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(j: usize) -> (ModelConfig, PriorSpec, LaggedData) {
        let cfg = ModelConfig::new(2, 2, j, 1).unwrap();
        let priors = PriorSpec::simulation_default(2);
        let q = DVector::from_element(cfg.varying.map_or(0, |m| cfg.block_len(m)), 0.01);
        let sim = model::generate_dataset(&cfg, &priors, &q, 40, 9, 0).unwrap();
        (cfg, priors, LaggedData::new(&sim.data, 2).unwrap())
    }

    #[test]
    fn stored_draw_bookkeeping() {
        let s = McmcSettings::new(10_000, 1_000, 10);
        assert_eq!(s.stored_draws(), 900);
        assert_eq!((0..10_000).filter(|&i| s.stores(i)).count(), 900);
        assert!(McmcSettings::new(10, 10, 1).validate().is_err());
        assert!(McmcSettings::new(10, 2, 0).validate().is_err());
    }

    #[test]
    fn replay_is_deterministic() {
        for j in 0..=3 {
            let (cfg, priors, data) = setup(j);
            let settings = McmcSettings::new(30, 10, 2);
            let a = run_chain(&data, &cfg, &priors, &settings, &mut RngStream::new(4, 1)).unwrap();
            let b = run_chain(&data, &cfg, &priors, &settings, &mut RngStream::new(4, 1)).unwrap();
            assert_eq!(a.n_draws, 10);
            assert_eq!(a.trace, b.trace);
            assert_eq!(a.coefficient_means().unwrap(), b.coefficient_means().unwrap());
        }
    }

    #[test]
    fn path_has_full_length() {
        for j in 1..=3 {
            let (cfg, priors, data) = setup(j);
            let mut rng = RngStream::new(1, 0);
            let mut state = initial_state(&cfg, &priors, data.len(), &mut rng);
            step_tv_path(&mut state, &data, &cfg, &priors, &mut rng).unwrap();
            let path = state.path.as_ref().unwrap();
            let mode = cfg.varying.unwrap();
            assert_eq!(path.len() * path[0].len(), data.len() * cfg.block_len(mode));
        }
    }

    #[test]
    fn single_chain_matches_parallel_run() {
        let (cfg, priors, data) = setup(1);
        let settings = McmcSettings::new(20, 5, 1);
        let par = run_parallel_chains(&data, &cfg, &priors, &settings, 1, 77).unwrap();
        let one = run_chain(&data, &cfg, &priors, &settings, &mut RngStream::new(77, 0)).unwrap();
        assert_eq!(par[0].trace, one.trace);
        assert_eq!(par[0].stream, 0);
    }

    #[test]
    fn mismatched_data_is_rejected() {
        let (cfg, priors, data) = setup(0);
        let other = ModelConfig::new(2, 1, 0, 1).unwrap();
        let err = run_chain(&data, &other, &priors, &McmcSettings::new(5, 1, 1), &mut RngStream::new(0, 0));
        assert!(matches!(err, Err(Error::Dimension(_))));
        assert!(run_parallel_chains(&data, &cfg, &priors, &McmcSettings::new(5, 1, 1), 0, 1).is_err());
    }
}
