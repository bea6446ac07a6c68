//! Model configurations, priors and the synthetic data generator.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dist::{self, RngStream};
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor3};

/// One of the three CP loadings. `Response` is `B1` (rows index the response
/// series), `Predictor` is `B2` (rows index the lagged series) and `Temporal`
/// is `B3` (rows index the lag).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    Response,
    Predictor,
    Temporal,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Response, Mode::Predictor, Mode::Temporal];

    /// Zero-based position in `[B1, B2, B3]`.
    pub fn index(self) -> usize {
        match self {
            Mode::Response => 0,
            Mode::Predictor => 1,
            Mode::Temporal => 2,
        }
    }

    /// One-based loading number `j`.
    pub fn number(self) -> usize {
        self.index() + 1
    }

    pub fn from_number(j: usize) -> Result<Self> {
        match j {
            1 => Ok(Mode::Response),
            2 => Ok(Mode::Predictor),
            3 => Ok(Mode::Temporal),
            _ => Err(Error::InvalidParameter(format!("loading index {j} is not 1, 2 or 3"))),
        }
    }

    /// Row count `I_j` of this loading.
    pub fn rows(self, n: usize, p: usize) -> usize {
        match self {
            Mode::Temporal => p,
            _ => n,
        }
    }
}

/// A model configuration: TVAR(P) when `varying` is `None`, otherwise
/// TVP-TVAR(P, j) with loading `j` following a random walk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ConfigRepr", into = "ConfigRepr")]
pub struct ModelConfig {
    pub n: usize,
    pub p: usize,
    pub varying: Option<Mode>,
    pub rank: usize,
}

#[derive(Serialize, Deserialize)]
struct ConfigRepr {
    n: usize,
    p: usize,
    j: usize,
    rank: usize,
}

impl TryFrom<ConfigRepr> for ModelConfig {
    type Error = Error;

    fn try_from(r: ConfigRepr) -> Result<Self> {
        ModelConfig::new(r.n, r.p, r.j, r.rank)
    }
}

impl From<ModelConfig> for ConfigRepr {
    fn from(c: ModelConfig) -> Self {
        ConfigRepr {
            n: c.n,
            p: c.p,
            j: c.j(),
            rank: c.rank,
        }
    }
}

impl ModelConfig {
    /// `j = 0` is the time-invariant TVAR; `j = 1, 2, 3` selects the
    /// time-varying loading.
    pub fn new(n: usize, p: usize, j: usize, rank: usize) -> Result<Self> {
        let varying = if j == 0 { None } else { Some(Mode::from_number(j)?) };
        let cfg = Self { n, p, varying, rank };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::InvalidParameter(format!(
                "need N >= 1 and P >= 1, got N = {}, P = {}",
                self.n, self.p
            )));
        }
        let max = self.max_rank();
        if self.rank == 0 || self.rank > max {
            return Err(Error::InvalidParameter(format!(
                "rank {} outside 1..={max} for N = {}, P = {}",
                self.rank, self.n, self.p
            )));
        }
        Ok(())
    }

    /// Largest admissible CP rank, `min(N², N·P)`.
    pub fn max_rank(&self) -> usize {
        (self.n * self.n).min(self.n * self.p)
    }

    pub fn j(&self) -> usize {
        self.varying.map_or(0, Mode::number)
    }

    pub fn with_rank(&self, rank: usize) -> Result<Self> {
        Self::new(self.n, self.p, self.j(), rank)
    }

    /// `I_j` for a loading.
    pub fn rows(&self, mode: Mode) -> usize {
        mode.rows(self.n, self.p)
    }

    /// Length of `vec(B_j)`.
    pub fn block_len(&self, mode: Mode) -> usize {
        self.rows(mode) * self.rank
    }

    pub fn static_modes(&self) -> Vec<Mode> {
        Mode::ALL
            .into_iter()
            .filter(|m| Some(*m) != self.varying)
            .collect()
    }

    pub fn tensor_dims(&self) -> [usize; 3] {
        [self.n, self.n, self.p]
    }

    /// Label used in tables, e.g. `TVAR(3)` or `TVP-TVAR(3,1)`.
    pub fn label(&self) -> String {
        match self.varying {
            None => format!("TVAR({})", self.p),
            Some(m) => format!("TVP-TVAR({},{})", self.p, m.number()),
        }
    }

    /// The four configurations TVAR(P), TVP-TVAR(P, 1..3) at one rank.
    pub fn all_configurations(n: usize, p: usize, rank: usize) -> Result<Vec<Self>> {
        (0..=3).map(|j| Self::new(n, p, j, rank)).collect()
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} R={}", self.label(), self.rank)
    }
}

/// Prior hyperparameters. The inverse-gamma pair `(a, b)` is shared by every
/// state-noise variance.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorSpec {
    /// Margin variance multiplier σ², treated as known.
    pub sigma2: f64,
    /// Inverse-Wishart degrees of freedom ν.
    pub nu: f64,
    /// Inverse-Wishart scale S.
    pub scale: DMatrix<f64>,
    pub ig_shape: f64,
    pub ig_scale: f64,
}

impl PriorSpec {
    /// σ² = 0.5, ν = 6, S = I₃ generalized to `n` series as ν = n + 3,
    /// with a = b = 0.01.
    pub fn simulation_default(n: usize) -> Self {
        Self {
            sigma2: 0.5,
            nu: n as f64 + 3.0,
            scale: DMatrix::identity(n, n),
            ig_shape: 0.01,
            ig_scale: 0.01,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma2 = {} must be positive", self.sigma2)));
        }
        if self.scale.nrows() != n || self.scale.ncols() != n {
            return Err(Error::Dimension(format!(
                "inverse-Wishart scale is {}x{}, expected {n}x{n}",
                self.scale.nrows(),
                self.scale.ncols()
            )));
        }
        if (&self.scale - self.scale.transpose()).amax() > 1e-10 {
            return Err(Error::InvalidParameter("inverse-Wishart scale must be symmetric".into()));
        }
        dist::cholesky(&self.scale, "inverse-Wishart scale")?;
        if !(self.nu > n as f64 - 1.0) {
            return Err(Error::InvalidParameter(format!(
                "nu = {} must exceed N - 1 = {}",
                self.nu,
                n as f64 - 1.0
            )));
        }
        if !(self.ig_shape > 0.0 && self.ig_scale > 0.0) {
            return Err(Error::InvalidParameter(
                "inverse-gamma hyperparameters must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Prior mean of Ω, `S / (ν - N - 1)`, or `None` when it does not exist.
    pub fn omega_prior_mean(&self) -> Option<DMatrix<f64>> {
        let denom = self.nu - self.scale.nrows() as f64 - 1.0;
        (denom > 0.0).then(|| &self.scale / denom)
    }
}

/// Diagonal of the prior covariance `Σ_j` of `vec(B_j)`: `σ²` everywhere for
/// the response and predictor loadings, `σ² / p²` for lag row `p` of the
/// temporal loading.
pub fn prior_variances(mode: Mode, cfg: &ModelConfig, sigma2: f64) -> DVector<f64> {
    let rows = cfg.rows(mode);
    DVector::from_fn(rows * cfg.rank, |k, _| match mode {
        Mode::Temporal => {
            let lag = (k % rows + 1) as f64;
            sigma2 / (lag * lag)
        }
        _ => sigma2,
    })
}

/// Prior covariance `Σ_j` as a dense matrix.
pub fn build_sigma(mode: Mode, cfg: &ModelConfig, sigma2: f64) -> DMatrix<f64> {
    DMatrix::from_diagonal(&prior_variances(mode, cfg, sigma2))
}

/// Prior variance `R σ⁶ / p²` of coefficient entry `(i1, i2, p)`.
pub fn prior_tensor_entry_variance(rank: usize, sigma2: f64, lag: usize) -> f64 {
    rank as f64 * sigma2.powi(3) / (lag * lag) as f64
}

/// Draws the three loadings independently from their priors.
pub fn draw_prior_loadings<R: Rng + ?Sized>(
    cfg: &ModelConfig,
    sigma2: f64,
    rng: &mut R,
) -> [DMatrix<f64>; 3] {
    Mode::ALL.map(|mode| {
        let sd = prior_variances(mode, cfg, sigma2).map(f64::sqrt);
        let rows = cfg.rows(mode);
        DMatrix::from_fn(rows, cfg.rank, |i, r| {
            sd[i + rows * r] * rng.sample::<f64, _>(StandardNormal)
        })
    })
}

/// Observations arranged for a VAR(P): the first `P` rows are conditioned on
/// and rows `P..T` are modelled.
#[derive(Clone, Debug)]
pub struct LaggedData {
    pub n: usize,
    pub p: usize,
    /// `y_t` for each modelled row.
    pub targets: Vec<DVector<f64>>,
    /// `X_t = (y_{t-1}, ..., y_{t-P})`, `N x P`.
    pub lags: Vec<DMatrix<f64>>,
}

impl LaggedData {
    /// `data` is `T x N`, one row per time point.
    pub fn new(data: &DMatrix<f64>, p: usize) -> Result<Self> {
        let (t_len, n) = data.shape();
        if p == 0 || n == 0 {
            return Err(Error::InvalidParameter("need P >= 1 and N >= 1".into()));
        }
        if t_len <= p {
            return Err(Error::InvalidParameter(format!(
                "series of length {t_len} is too short for {p} lags"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("data must be finite".into()));
        }
        let targets = (p..t_len).map(|t| data.row(t).transpose()).collect();
        let lags = (p..t_len)
            .map(|t| DMatrix::from_fn(n, p, |i, lag| data[(t - 1 - lag, i)]))
            .collect();
        Ok(Self { n, p, targets, lags })
    }

    /// Number of modelled time points.
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Stacked regressor `x_t = vec(X_t)`.
    pub fn x(&self, t: usize) -> DVector<f64> {
        DVector::from_column_slice(self.lags[t].as_slice())
    }
}

/// Parameters that generated a simulated dataset.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub config: ModelConfig,
    pub seed: u64,
    pub stream: u64,
    /// `[B1, B2, B3]`; the time-varying one holds its value at the first time point.
    pub loadings: [DMatrix<f64>; 3],
    /// Path of the time-varying loading, one matrix per row of the dataset.
    pub path: Option<Vec<DMatrix<f64>>>,
    pub omega: DMatrix<f64>,
    /// State-noise variances in `vec(B_j)` order; empty for TVAR.
    pub q: DVector<f64>,
    /// One coefficient tensor per dataset row (a single tensor for TVAR).
    pub coefficients: Vec<Tensor3>,
}

impl GroundTruth {
    pub fn coefficient(&self, t: usize) -> &Tensor3 {
        if self.coefficients.len() == 1 {
            &self.coefficients[0]
        } else {
            &self.coefficients[t]
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimulatedDataset {
    /// `T x N`.
    pub data: DMatrix<f64>,
    pub truth: GroundTruth,
    /// Number of rejected explosive draws before this one.
    pub regenerations: usize,
}

/// Largest absolute value tolerated in a simulated series before it is
/// rejected as explosive.
pub const EXPLOSION_BOUND: f64 = 1e6;
const MAX_REGENERATIONS: usize = 10_000;

/// Simulates `t_len` observations from the configuration.
///
/// Loadings come from their priors, Ω from its inverse-Wishart prior, and the
/// time-varying loading follows a random walk with diagonal variances `q`
/// (ignored for TVAR). The `P` presample values are i.i.d. standard normal.
/// Dataset `dataset` uses stream `dataset`; rejected explosive draws move on
/// to streams `dataset + (attempt << 32)`.
pub fn generate_dataset(
    cfg: &ModelConfig,
    priors: &PriorSpec,
    q: &DVector<f64>,
    t_len: usize,
    seed: u64,
    dataset: u64,
) -> Result<SimulatedDataset> {
    cfg.validate()?;
    priors.validate(cfg.n)?;
    if t_len <= cfg.p {
        return Err(Error::InvalidParameter(format!(
            "T = {t_len} must exceed P = {}",
            cfg.p
        )));
    }
    if let Some(mode) = cfg.varying {
        if q.len() != cfg.block_len(mode) {
            return Err(Error::Dimension(format!(
                "q has length {}, expected {}",
                q.len(),
                cfg.block_len(mode)
            )));
        }
        if q.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParameter("q must be nonnegative".into()));
        }
    }
    for attempt in 0..MAX_REGENERATIONS {
        let stream = dataset.wrapping_add((attempt as u64) << 32);
        let mut rng = RngStream::new(seed, stream);
        let (data, truth) = simulate_once(cfg, priors, q, t_len, &mut rng)?;
        if data.iter().all(|v| v.is_finite() && v.abs() <= EXPLOSION_BOUND) {
            return Ok(SimulatedDataset {
                data,
                truth: GroundTruth { seed, stream, ..truth },
                regenerations: attempt,
            });
        }
    }
    Err(Error::Numerical(format!(
        "no non-explosive dataset after {MAX_REGENERATIONS} attempts"
    )))
}

/// Simulates `t_len` rows of a VAR with the given coefficient tensors (one
/// per row, or a single tensor for all rows) after `P` i.i.d. standard normal
/// presample rows, which are discarded.
pub fn simulate_series<R: Rng + ?Sized>(
    coefficients: &[Tensor3],
    omega: &DMatrix<f64>,
    t_len: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let [n, n2, p] = coefficients
        .first()
        .ok_or_else(|| Error::MissingData("no coefficient tensors".into()))?
        .dims();
    if n != n2 || omega.shape() != (n, n) {
        return Err(Error::Dimension("coefficient tensors and Omega disagree on N".into()));
    }
    if coefficients.len() != 1 && coefficients.len() != t_len {
        return Err(Error::Dimension(format!(
            "{} coefficient tensors for {t_len} rows",
            coefficients.len()
        )));
    }
    let omega_l = dist::cholesky(omega, "Omega")?.unpack();
    // Rows 0..p are presample, rows p.. are the returned series.
    let mut full = DMatrix::<f64>::zeros(t_len + p, n);
    for v in full.rows_mut(0, p).iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    for t in 0..t_len {
        let a = tensor::mode1_matricize(if coefficients.len() == 1 {
            &coefficients[0]
        } else {
            &coefficients[t]
        });
        let row = t + p;
        let x = DVector::from_fn(n * p, |k, _| full[(row - 1 - k / n, k % n)]);
        let eps = &omega_l * dist::standard_normal_vector(n, rng);
        let y = a * x + eps;
        full.row_mut(row).copy_from(&y.transpose());
    }
    Ok(full.rows(p, t_len).into_owned())
}

fn simulate_once(
    cfg: &ModelConfig,
    priors: &PriorSpec,
    q: &DVector<f64>,
    t_len: usize,
    rng: &mut RngStream,
) -> Result<(DMatrix<f64>, GroundTruth)> {
    let loadings = draw_prior_loadings(cfg, priors.sigma2, rng);
    let omega = dist::sample_inverse_wishart(priors.nu, &priors.scale, rng)?;

    let path = cfg.varying.map(|mode| {
        let rows = cfg.rows(mode);
        let sd = q.map(f64::sqrt);
        let mut current = loadings[mode.index()].clone();
        let mut path = Vec::with_capacity(t_len);
        path.push(current.clone());
        for _ in 1..t_len {
            for k in 0..current.len() {
                let z: f64 = rng.sample(StandardNormal);
                current[(k % rows, k / rows)] += sd[k] * z;
            }
            path.push(current.clone());
        }
        path
    });

    let coefficients: Vec<Tensor3> = match (&path, cfg.varying) {
        (Some(path), Some(mode)) => path
            .iter()
            .map(|b| {
                let mut parts = [&loadings[0], &loadings[1], &loadings[2]];
                parts[mode.index()] = b;
                tensor::compose_unchecked(parts[0], parts[1], parts[2])
            })
            .collect(),
        _ => vec![tensor::compose_unchecked(&loadings[0], &loadings[1], &loadings[2])],
    };

    let data = simulate_series(&coefficients, &omega, t_len, rng)?;
    let q = if cfg.varying.is_some() { q.clone() } else { DVector::zeros(0) };
    let truth = GroundTruth {
        config: *cfg,
        seed: 0,
        stream: 0,
        loadings,
        path,
        omega,
        q,
        coefficients,
    };
    Ok((data, truth))
}
