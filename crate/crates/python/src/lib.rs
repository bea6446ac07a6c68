//! Python bindings. Matrices cross the boundary as lists of rows; coefficient
//! tensors as nested lists indexed `[response][predictor][lag]`.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use tvptvar::gibbs::{self, McmcSettings, QShapeRule};
use tvptvar::granger::{self, EdgeRule, GcAccumulator, GcProbCube};
use tvptvar::io::{self, TruthDoc};
use tvptvar::selection::{self, ChainDic, DicVariant, SelectionSettings};
use tvptvar::{model, tensor, LaggedData, PriorSpec, Tensor3};

fn to_py_err(e: tvptvar::Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else if matches!(e, tvptvar::Error::Io(_)) {
        PyOSError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    io::rows_to_matrix(&rows).map_err(to_py_err)
}

fn nested(a: &Tensor3) -> Vec<Vec<Vec<f64>>> {
    let [n1, n2, n3] = a.dims();
    (0..n1)
        .map(|i| (0..n2).map(|j| (0..n3).map(|k| a.get(i, j, k)).collect()).collect())
        .collect()
}

/// Serializable value to native Python objects through `json`.
fn to_python<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn priors_for(n: usize, sigma2: f64, nu: Option<f64>, ig_shape: f64, ig_scale: f64) -> PyResult<PriorSpec> {
    let spec = PriorSpec {
        sigma2,
        nu: nu.unwrap_or(n as f64 + 3.0),
        scale: DMatrix::identity(n, n),
        ig_shape,
        ig_scale,
    };
    spec.validate(n).map_err(to_py_err)?;
    Ok(spec)
}

/// VAR dimension `n`, lag order `p`, time-varying loading `j` (0 for TVAR)
/// and CP rank.
#[pyclass(module = "tvptvar", frozen, eq, hash, skip_from_py_object)]
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct ModelConfig {
    inner: model::ModelConfig,
}

#[pymethods]
impl ModelConfig {
    #[new]
    fn new(n: usize, p: usize, j: usize, rank: usize) -> PyResult<Self> {
        Ok(Self {
            inner: model::ModelConfig::new(n, p, j, rank).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p
    }

    #[getter]
    fn j(&self) -> usize {
        self.inner.j()
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label()
    }

    #[getter]
    fn max_rank(&self) -> usize {
        self.inner.max_rank()
    }

    fn with_rank(&self, rank: usize) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.with_rank(rank).map_err(to_py_err)?,
        })
    }

    /// `(full VAR count, CP count)`.
    fn param_count(&self) -> (usize, usize) {
        tensor::param_count(self.inner.n, self.inner.p, self.inner.rank)
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelConfig(n={}, p={}, j={}, rank={})",
            self.inner.n,
            self.inner.p,
            self.inner.j(),
            self.inner.rank
        )
    }
}

/// Posterior Granger-causality probabilities per time, source and target.
#[pyclass(module = "tvptvar", frozen, skip_from_py_object)]
struct GrangerCube {
    inner: GcProbCube,
}

impl GrangerCube {
    fn rule(threshold: Option<f64>, top_k: Option<usize>) -> PyResult<EdgeRule> {
        match (threshold, top_k) {
            (Some(_), Some(_)) => Err(PyValueError::new_err("give either threshold or top_k")),
            (_, Some(k)) => Ok(EdgeRule::TopK(k)),
            (t, None) => Ok(EdgeRule::Threshold(t.unwrap_or(0.999))),
        }
    }
}

#[pymethods]
impl GrangerCube {
    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn t_len(&self) -> usize {
        self.inner.t_len
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }

    #[getter]
    fn draws(&self) -> u64 {
        self.inner.draws
    }

    /// Probability that series `source` Granger-causes `target` at time `t`.
    fn probability(&self, t: usize, source: usize, target: usize) -> PyResult<f64> {
        let n = self.inner.n;
        if t >= self.inner.t_len || source >= n || target >= n {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.inner.get(t, source, target))
    }

    /// Edges at time `t` as `(source, target, probability)`, most probable first.
    #[pyo3(signature = (t, threshold=None, top_k=None))]
    fn edges(&self, t: usize, threshold: Option<f64>, top_k: Option<usize>) -> PyResult<Vec<(usize, usize, f64)>> {
        let net = granger::gc_network(&self.inner, t, Self::rule(threshold, top_k)?).map_err(to_py_err)?;
        Ok(net.edges.iter().map(|e| (e.from, e.to, e.probability)).collect())
    }

    #[pyo3(signature = (threshold=None, top_k=None))]
    fn counts(&self, threshold: Option<f64>, top_k: Option<usize>) -> PyResult<Vec<usize>> {
        granger::gc_count_series(&self.inner, Self::rule(threshold, top_k)?).map_err(to_py_err)
    }

    #[pyo3(signature = (t, threshold=None, top_k=None))]
    fn to_dot(&self, t: usize, threshold: Option<f64>, top_k: Option<usize>) -> PyResult<String> {
        let net = granger::gc_network(&self.inner, t, Self::rule(threshold, top_k)?).map_err(to_py_err)?;
        Ok(net.to_dot(self.inner.n))
    }

    fn __repr__(&self) -> String {
        format!(
            "GrangerCube(n={}, t_len={}, delta={}, draws={})",
            self.inner.n, self.inner.t_len, self.inner.delta, self.inner.draws
        )
    }
}

/// Output of [`fit`]: DICs, posterior means and the pooled Granger cube.
#[pyclass(module = "tvptvar", frozen, skip_from_py_object)]
struct FitResult {
    config: model::ModelConfig,
    dics: Vec<ChainDic>,
    coefficient_means: Vec<Tensor3>,
    omega_mean: DMatrix<f64>,
    q_mean: DVector<f64>,
    cube: Option<GcProbCube>,
}

#[pymethods]
impl FitResult {
    #[getter]
    fn config(&self) -> ModelConfig {
        ModelConfig { inner: self.config }
    }

    /// Mean DIC over chains per variant (`c1`, `c2` and, if tracked, `m`).
    #[getter]
    fn dic<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for v in [DicVariant::C1, DicVariant::C2, DicVariant::M] {
            let values: Option<Vec<f64>> = self.dics.iter().map(|c| c.get(v)).collect();
            if let Some(values) = values {
                d.set_item(v.name(), values.iter().sum::<f64>() / values.len() as f64)?;
            }
        }
        Ok(d)
    }

    /// Per-chain DIC details.
    #[getter]
    fn chain_dics(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_python(py, &self.dics)
    }

    /// Standard deviation of the per-chain DICs of one variant.
    #[pyo3(signature = (variant="c1", scale_by_sqrt_n=false))]
    fn mc_error(&self, variant: &str, scale_by_sqrt_n: bool) -> PyResult<f64> {
        let v = match variant {
            "c1" => DicVariant::C1,
            "c2" => DicVariant::C2,
            "m" => DicVariant::M,
            other => return Err(PyValueError::new_err(format!("unknown DIC variant '{other}'"))),
        };
        let values: Vec<f64> = self
            .dics
            .iter()
            .map(|c| c.get(v))
            .collect::<Option<_>>()
            .ok_or_else(|| PyValueError::new_err(format!("variant {variant} was not computed")))?;
        selection::mc_error(&values, scale_by_sqrt_n).map_err(to_py_err)
    }

    /// Posterior mean coefficient tensor per modelled time point.
    #[getter]
    fn coefficient_means(&self) -> Vec<Vec<Vec<Vec<f64>>>> {
        self.coefficient_means.iter().map(nested).collect()
    }

    #[getter]
    fn omega_mean(&self) -> Vec<Vec<f64>> {
        io::matrix_to_rows(&self.omega_mean)
    }

    #[getter]
    fn q_mean(&self) -> Vec<f64> {
        self.q_mean.iter().copied().collect()
    }

    #[getter]
    fn granger(&self) -> Option<GrangerCube> {
        self.cube.clone().map(|inner| GrangerCube { inner })
    }
}

/// CP composition of loadings `b1 (N x R)`, `b2 (N x R)`, `b3 (P x R)`.
#[pyfunction]
fn cp_compose(b1: Vec<Vec<f64>>, b2: Vec<Vec<f64>>, b3: Vec<Vec<f64>>) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let a = tensor::cp_compose(&matrix(b1)?, &matrix(b2)?, &matrix(b3)?).map_err(to_py_err)?;
    Ok(nested(&a))
}

/// `(N^2 P, (2N + P) R)`.
#[pyfunction]
fn param_count(n: usize, p: usize, rank: usize) -> (usize, usize) {
    tensor::param_count(n, p, rank)
}

/// Knee rank of a DIC curve; ranks default to `1..=len(values)`.
#[pyfunction]
#[pyo3(signature = (values, ranks=None))]
fn kneedle(values: Vec<f64>, ranks: Option<Vec<usize>>) -> PyResult<usize> {
    match ranks {
        Some(r) => selection::kneedle_at(&r, &values),
        None => selection::kneedle(&values),
    }
    .map_err(to_py_err)
}

type Rows = Vec<Vec<f64>>;

/// Standardized data (list of rows) with per-column means and sample sds.
#[pyfunction]
fn standardize(data: Rows) -> PyResult<(Rows, Vec<f64>, Vec<f64>)> {
    let (z, t) = io::standardize(&matrix(data)?).map_err(to_py_err)?;
    Ok((io::matrix_to_rows(&z), t.mean, t.sd))
}

/// Simulates one dataset; returns `(data rows, ground truth dict)`.
#[pyfunction]
#[pyo3(signature = (config, t_len, seed, dataset=0, q=0.01, sigma2=0.5, nu=None, ig_shape=0.01, ig_scale=0.01))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    config: &ModelConfig,
    t_len: usize,
    seed: u64,
    dataset: u64,
    q: f64,
    sigma2: f64,
    nu: Option<f64>,
    ig_shape: f64,
    ig_scale: f64,
) -> PyResult<(Vec<Vec<f64>>, Py<PyAny>)> {
    let cfg = config.inner;
    let priors = priors_for(cfg.n, sigma2, nu, ig_shape, ig_scale)?;
    let q = DVector::from_element(cfg.varying.map_or(0, |m| cfg.block_len(m)), q);
    let set = py
        .detach(|| model::generate_dataset(&cfg, &priors, &q, t_len, seed, dataset))
        .map_err(to_py_err)?;
    let truth = to_python(py, &TruthDoc::from_truth(&set.truth, set.regenerations))?;
    Ok((io::matrix_to_rows(&set.data), truth))
}

fn mcmc(n_iter: usize, burn_in: usize, thin: usize, half_increments: bool) -> McmcSettings {
    let mut s = McmcSettings::new(n_iter, burn_in, thin);
    if half_increments {
        s.q_shape = QShapeRule::HalfIncrements;
    }
    s
}

/// Runs `n_chains` Gibbs chains (chain `k` on stream `k` of `seed`).
#[pyfunction]
#[pyo3(signature = (
    data, config, n_iter=10_000, burn_in=1_000, thin=1, n_chains=4, seed=0,
    track_marginal=false, granger_delta=Some(0.01), half_increments=false,
    sigma2=0.5, nu=None, ig_shape=0.01, ig_scale=0.01,
))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    data: Vec<Vec<f64>>,
    config: &ModelConfig,
    n_iter: usize,
    burn_in: usize,
    thin: usize,
    n_chains: usize,
    seed: u64,
    track_marginal: bool,
    granger_delta: Option<f64>,
    half_increments: bool,
    sigma2: f64,
    nu: Option<f64>,
    ig_shape: f64,
    ig_scale: f64,
) -> PyResult<FitResult> {
    let cfg = config.inner;
    let data = matrix(data)?;
    let priors = priors_for(cfg.n, sigma2, nu, ig_shape, ig_scale)?;
    let mut settings = mcmc(n_iter, burn_in, thin, half_increments);
    settings.track_marginal = track_marginal;
    settings.granger_delta = granger_delta;
    py.detach(move || -> tvptvar::Result<FitResult> {
        let lagged = LaggedData::new(&data, cfg.p)?;
        let chains = gibbs::run_parallel_chains(&lagged, &cfg, &priors, &settings, n_chains, seed)?;
        let dics = chains
            .iter()
            .enumerate()
            .map(|(k, c)| ChainDic::compute(k, c, &lagged, &priors))
            .collect::<tvptvar::Result<Vec<_>>>()?;
        let k = chains.len() as f64;
        let mut coefficient_means = chains[0].coefficient_means()?;
        let mut omega_mean = chains[0].omega_mean()?;
        let mut q_mean = chains[0].q_mean()?;
        for c in &chains[1..] {
            for (acc, a) in coefficient_means.iter_mut().zip(c.coefficient_means()?) {
                acc.axpy(1.0, &a)?;
            }
            omega_mean += c.omega_mean()?;
            q_mean += c.q_mean()?;
        }
        coefficient_means.iter_mut().for_each(|a| a.scale(1.0 / k));
        let cube = match granger_delta {
            Some(d) => {
                let mut acc = GcAccumulator::new(d, cfg.n, lagged.len())?;
                for g in chains.iter().filter_map(|c| c.granger.as_ref()) {
                    acc.merge(g)?;
                }
                Some(acc.probabilities()?)
            }
            None => None,
        };
        Ok(FitResult {
            config: cfg,
            dics,
            coefficient_means,
            omega_mean: omega_mean / k,
            q_mean: q_mean / k,
            cube,
        })
    })
    .map_err(to_py_err)
}

/// DIC-based selection over configurations `js` (0 = TVAR) and `ranks`;
/// returns the selection report as a dict.
#[pyfunction]
#[pyo3(signature = (
    data, p, js, ranks, n_iter=5_000, burn_in=1_000, thin=1, n_chains=4, seed=0,
    sigma2=0.5, nu=None, ig_shape=0.01, ig_scale=0.01,
))]
#[allow(clippy::too_many_arguments)]
fn select(
    py: Python<'_>,
    data: Vec<Vec<f64>>,
    p: usize,
    js: Vec<usize>,
    ranks: Vec<usize>,
    n_iter: usize,
    burn_in: usize,
    thin: usize,
    n_chains: usize,
    seed: u64,
    sigma2: f64,
    nu: Option<f64>,
    ig_shape: f64,
    ig_scale: f64,
) -> PyResult<Py<PyAny>> {
    let data = matrix(data)?;
    let n = data.ncols();
    let priors = priors_for(n, sigma2, nu, ig_shape, ig_scale)?;
    let configs = js
        .iter()
        .map(|&j| model::ModelConfig::new(n, p, j, 1))
        .collect::<tvptvar::Result<Vec<_>>>()
        .map_err(to_py_err)?;
    let settings = SelectionSettings {
        mcmc: mcmc(n_iter, burn_in, thin, false),
        n_chains,
        seed,
        scale_mc_error: false,
    };
    let report = py
        .detach(|| {
            let lagged = LaggedData::new(&data, p)?;
            selection::select_model(&lagged, &configs, &ranks, &priors, &settings)
        })
        .map_err(to_py_err)?;
    to_python(py, &report)
}

#[pymodule]
#[pyo3(name = "tvptvar")]
fn tvptvar_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ModelConfig>()?;
    m.add_class::<GrangerCube>()?;
    m.add_class::<FitResult>()?;
    m.add_function(wrap_pyfunction!(cp_compose, m)?)?;
    m.add_function(wrap_pyfunction!(param_count, m)?)?;
    m.add_function(wrap_pyfunction!(kneedle, m)?)?;
    m.add_function(wrap_pyfunction!(standardize, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
