//! Deviance information criteria, Monte Carlo error, margin alignment,
//! knee-point rank selection and the model-selection driver.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{derive_seed, RngStream};
use crate::error::{Error, Result};
use crate::gibbs::{self, ChainDraws, McmcSettings};
use crate::model::{LaggedData, Mode, ModelConfig, PriorSpec};
use crate::tensor::{self, Tensor3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DicVariant {
    /// Conditional on the coefficient tensors and Ω.
    C1,
    /// Conditional on the loadings (path included) and Ω.
    C2,
    /// Time-varying loading integrated out.
    M,
}

impl DicVariant {
    pub const ALL: [DicVariant; 3] = [DicVariant::C1, DicVariant::C2, DicVariant::M];

    pub fn name(self) -> &'static str {
        match self {
            DicVariant::C1 => "c1",
            DicVariant::C2 => "c2",
            DicVariant::M => "m",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DicResult {
    pub variant: DicVariant,
    pub mean_deviance: f64,
    pub plug_in_deviance: f64,
    pub dic: f64,
    pub p_d: f64,
}

impl DicResult {
    /// From the posterior mean log-likelihood and the log-likelihood at the
    /// plug-in estimate: `dic = -4 E[log p] + 2 log p(y | θ̂)`.
    pub fn from_logliks(variant: DicVariant, mean_loglik: f64, plug_in_loglik: f64) -> Result<Self> {
        let mean_deviance = -2.0 * mean_loglik;
        let plug_in_deviance = -2.0 * plug_in_loglik;
        let out = Self {
            variant,
            mean_deviance,
            plug_in_deviance,
            dic: 2.0 * mean_deviance - plug_in_deviance,
            p_d: mean_deviance - plug_in_deviance,
        };
        if !out.dic.is_finite() {
            return Err(Error::Numerical(format!("DIC {} is not finite", variant.name())));
        }
        Ok(out)
    }
}

/// Plug-in at the posterior means of the coefficient tensors and of Ω.
pub fn dic_c1(chain: &ChainDraws, data: &LaggedData) -> Result<DicResult> {
    let plug = gibbs::conditional_loglik(&chain.coefficient_means()?, &chain.omega_mean()?, data)?;
    DicResult::from_logliks(DicVariant::C1, chain.mean_loglik()?, plug)
}

/// Plug-in tensors composed from the posterior means of the loadings.
pub fn dic_c2(chain: &ChainDraws, data: &LaggedData) -> Result<DicResult> {
    let plug = gibbs::conditional_loglik(&plug_in_tensors_from_margins(chain)?, &chain.omega_mean()?, data)?;
    DicResult::from_logliks(DicVariant::C2, chain.mean_loglik()?, plug)
}

/// `⟦E[B1], E[B2], E[B3]⟧` per time point, the time-varying loading at its
/// per-time mean.
pub fn plug_in_tensors_from_margins(chain: &ChainDraws) -> Result<Vec<Tensor3>> {
    let means = chain.loading_means()?;
    match (chain.config.varying, chain.path_means()?) {
        (Some(mode), Some(path)) => Ok(path
            .into_iter()
            .map(|b| {
                let mut parts = means.clone();
                parts[mode.index()] = b;
                tensor::compose_unchecked(&parts[0], &parts[1], &parts[2])
            })
            .collect()),
        _ => Ok(vec![tensor::compose_unchecked(&means[0], &means[1], &means[2])]),
    }
}

/// Marginal DIC with the time-varying loading integrated out; the chain must
/// have tracked the integrated likelihood.
pub fn dic_m(chain: &ChainDraws, data: &LaggedData, priors: &PriorSpec) -> Result<DicResult> {
    let cfg = chain.config;
    if cfg.varying.is_none() {
        return Err(Error::InvalidParameter("marginal DIC needs a time-varying loading".into()));
    }
    let plug = gibbs::integrated_loglik(
        &cfg,
        priors,
        data,
        &chain.loading_means()?,
        &chain.omega_mean()?,
        &chain.q_mean()?,
    )?;
    DicResult::from_logliks(DicVariant::M, chain.mean_marginal_loglik()?, plug)
}

/// Sample standard deviation of per-chain DICs, optionally divided by
/// `sqrt(n)`.
pub fn mc_error(values: &[f64], scale_by_sqrt_n: bool) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidParameter("Monte Carlo error needs at least two chains".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    Ok(if scale_by_sqrt_n { sd / (n as f64).sqrt() } else { sd })
}

/// Knee of a DIC curve over ranks `1..=values.len()`; returns the 1-based rank.
pub fn kneedle(values: &[f64]) -> Result<usize> {
    let ranks: Vec<usize> = (1..=values.len()).collect();
    kneedle_at(&ranks, values)
}

/// Knee of a DIC curve over increasing `ranks`.
///
/// Values are scaled to the unit interval by their minimum and maximum and
/// ranks by the first and last rank; the knee is the point with the largest
/// vertical distance to the chord through the first and last scaled points.
/// Ties go to the smaller rank.
pub fn kneedle_at(ranks: &[usize], values: &[f64]) -> Result<usize> {
    if ranks.len() != values.len() {
        return Err(Error::Dimension("ranks and values differ in length".into()));
    }
    if values.len() < 3 {
        return Err(Error::InvalidParameter("knee detection needs at least three ranks".into()));
    }
    if ranks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("ranks must be strictly increasing".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("DIC values must be finite".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Err(Error::InvalidParameter("constant DIC curve has no knee".into()));
    }
    let scaled: Vec<f64> = values.iter().map(|v| (v - lo) / (hi - lo)).collect();
    let (y0, y1) = (scaled[0], scaled[scaled.len() - 1]);
    let (r0, r1) = (ranks[0] as f64, ranks[ranks.len() - 1] as f64);
    let mut best = (0usize, f64::NEG_INFINITY);
    for (k, (&r, &y)) in ranks.iter().zip(&scaled).enumerate() {
        let x = (r as f64 - r0) / (r1 - r0);
        let d = (y0 + (y1 - y0) * x - y).abs();
        if d > best.1 {
            best = (k, d);
        }
    }
    Ok(ranks[best.0])
}

/// Alignment of one chain's loading columns to a reference chain.
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    /// `permutation[r]` is the column of this chain matched to reference column `r`.
    pub permutation: Vec<usize>,
    /// Sign applied to each matched column, per loading.
    pub signs: Vec<Vec<f64>>,
    /// Aligned summaries, columns in reference order.
    pub aligned: Vec<DMatrix<f64>>,
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Matches the CP columns of each chain to those of `chains[0]`.
///
/// Each chain is described by one summary matrix per loading whose columns
/// are the margin series (for example posterior means stacked over time).
/// Columns are matched greedily without replacement by absolute correlation
/// of the `reference` loading; each loading's matched column is then
/// multiplied by the sign of its own correlation with the reference column.
pub fn align_margins(chains: &[Vec<DMatrix<f64>>], reference: usize) -> Result<Vec<Alignment>> {
    if chains.len() < 2 {
        return Err(Error::InvalidParameter("alignment needs at least two chains".into()));
    }
    let base = &chains[0];
    if reference >= base.len() {
        return Err(Error::InvalidParameter("reference loading out of range".into()));
    }
    let rank = base[reference].ncols();
    for c in chains {
        if c.len() != base.len() || c.iter().zip(base).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::Dimension("margin summaries differ in shape across chains".into()));
        }
    }
    let column = |m: &DMatrix<f64>, r: usize| m.column(r).iter().copied().collect::<Vec<f64>>();
    Ok(chains
        .iter()
        .map(|chain| {
            let mut pairs = Vec::with_capacity(rank * rank);
            for r in 0..rank {
                for c in 0..rank {
                    let rho = correlation(&column(&base[reference], r), &column(&chain[reference], c));
                    pairs.push((rho.abs(), r, c));
                }
            }
            pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut permutation = vec![usize::MAX; rank];
            let mut used = vec![false; rank];
            for (_, r, c) in pairs {
                if permutation[r] == usize::MAX && !used[c] {
                    permutation[r] = c;
                    used[c] = true;
                }
            }
            let mut signs = Vec::with_capacity(chain.len());
            let mut aligned = Vec::with_capacity(chain.len());
            for (l, m) in chain.iter().enumerate() {
                let mut out = DMatrix::zeros(m.nrows(), rank);
                let mut s = Vec::with_capacity(rank);
                for r in 0..rank {
                    let c = permutation[r];
                    let rho = correlation(&column(&base[l], r), &column(m, c));
                    let sign = if rho < 0.0 { -1.0 } else { 1.0 };
                    out.set_column(r, &(m.column(c) * sign));
                    s.push(sign);
                }
                signs.push(s);
                aligned.push(out);
            }
            Alignment {
                permutation,
                signs,
                aligned,
            }
        })
        .collect())
}

/// Posterior-mean margin summaries of a chain, one matrix per loading; the
/// time-varying loading's per-time means are stacked row-wise over time.
pub fn margin_summaries(chain: &ChainDraws) -> Result<Vec<DMatrix<f64>>> {
    let means = chain.loading_means()?;
    let path = chain.path_means()?;
    Ok(Mode::ALL
        .into_iter()
        .map(|mode| match (&path, chain.config.varying) {
            (Some(path), Some(m)) if m == mode => {
                let rows = path[0].nrows();
                DMatrix::from_fn(rows * path.len(), chain.config.rank, |i, r| path[i / rows][(i % rows, r)])
            }
            _ => means[mode.index()].clone(),
        })
        .collect())
}

/// The DIC variants of a single chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDic {
    pub chain: usize,
    pub c1: DicResult,
    pub c2: DicResult,
    pub m: Option<DicResult>,
}

impl ChainDic {
    pub fn compute(chain: usize, draws: &ChainDraws, data: &LaggedData, priors: &PriorSpec) -> Result<Self> {
        let m = if draws.config.varying.is_some() && draws.settings.track_marginal {
            Some(dic_m(draws, data, priors)?)
        } else {
            None
        };
        Ok(Self {
            chain,
            c1: dic_c1(draws, data)?,
            c2: dic_c2(draws, data)?,
            m,
        })
    }

    pub fn get(&self, variant: DicVariant) -> Option<f64> {
        match variant {
            DicVariant::C1 => Some(self.c1.dic),
            DicVariant::C2 => Some(self.c2.dic),
            DicVariant::M => self.m.map(|d| d.dic),
        }
    }
}

/// DICs of all chains for one (configuration, rank).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DicEntry {
    pub config: ModelConfig,
    pub rank: usize,
    pub seed: u64,
    pub chains: Vec<ChainDic>,
    /// Cross-chain mean of the conditional DIC used for selection.
    pub mean_dic: f64,
    /// Sample standard deviation of the per-chain conditional DICs.
    pub mc_error: Option<f64>,
}

impl DicEntry {
    pub fn new(config: ModelConfig, seed: u64, chains: Vec<ChainDic>, scale_mc_error: bool) -> Result<Self> {
        if chains.is_empty() {
            return Err(Error::MissingData("no chains".into()));
        }
        let c1: Vec<f64> = chains.iter().map(|c| c.c1.dic).collect();
        Ok(Self {
            config,
            rank: config.rank,
            seed,
            mean_dic: c1.iter().sum::<f64>() / c1.len() as f64,
            mc_error: mc_error(&c1, scale_mc_error).ok(),
            chains,
        })
    }

    /// Per-chain values of one variant, if every chain has it.
    pub fn variant_values(&self, variant: DicVariant) -> Option<Vec<f64>> {
        self.chains.iter().map(|c| c.get(variant)).collect()
    }
}

/// Failure of a (configuration, rank) job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedJob {
    pub config: ModelConfig,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DicTable {
    pub entries: Vec<DicEntry>,
    pub failures: Vec<FailedJob>,
}

impl DicTable {
    /// Configurations with at least one entry, with the mode-free
    /// configuration (rank 1) as key, in first-seen order.
    pub fn configurations(&self) -> Vec<ModelConfig> {
        let mut out: Vec<ModelConfig> = Vec::new();
        for e in &self.entries {
            let key = e.config.with_rank(1).unwrap_or(e.config);
            if !out.contains(&key) {
                out.push(key);
            }
        }
        out
    }

    /// Entries for one configuration (any rank), sorted by rank.
    pub fn curve(&self, config: &ModelConfig) -> Vec<&DicEntry> {
        let mut out: Vec<&DicEntry> = self
            .entries
            .iter()
            .filter(|e| e.config.n == config.n && e.config.p == config.p && e.config.varying == config.varying)
            .collect();
        out.sort_by_key(|e| e.rank);
        out
    }
}

/// Rank choice for one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigSelection {
    pub config: ModelConfig,
    /// Rank at the knee of the DIC curve (minimum DIC with fewer than three ranks).
    pub knee_rank: usize,
    pub knee_dic: f64,
    pub min_dic_rank: usize,
    pub min_dic: f64,
    /// Whether `knee_rank` fell back to the minimum DIC.
    pub knee_fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub selections: Vec<ConfigSelection>,
    /// Index into `selections` of the configuration with the lowest knee DIC.
    pub winner: usize,
    pub table: DicTable,
}

impl SelectionReport {
    pub fn winner(&self) -> &ConfigSelection {
        &self.selections[self.winner]
    }
}

/// Chooses a rank per configuration and the overall winner from a table.
pub fn select_from_table(table: DicTable) -> Result<SelectionReport> {
    let mut selections = Vec::new();
    for cfg in table.configurations() {
        let curve = table.curve(&cfg);
        let ranks: Vec<usize> = curve.iter().map(|e| e.rank).collect();
        let values: Vec<f64> = curve.iter().map(|e| e.mean_dic).collect();
        let (min_k, _) = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .ok_or_else(|| Error::MissingData("empty DIC curve".into()))?;
        let (knee_rank, fallback) = if values.len() >= 3 {
            match kneedle_at(&ranks, &values) {
                Ok(r) => (r, false),
                Err(e) => {
                    warn!("{}: knee detection failed ({e}); using minimum DIC", cfg.label());
                    (ranks[min_k], true)
                }
            }
        } else {
            (ranks[min_k], true)
        };
        let knee_dic = values[ranks.iter().position(|&r| r == knee_rank).unwrap_or(min_k)];
        selections.push(ConfigSelection {
            config: cfg.with_rank(knee_rank)?,
            knee_rank,
            knee_dic,
            min_dic_rank: ranks[min_k],
            min_dic: values[min_k],
            knee_fallback: fallback,
        });
    }
    let winner = selections
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.knee_dic.total_cmp(&b.1.knee_dic))
        .map(|(k, _)| k)
        .ok_or_else(|| {
            Error::Numerical(format!(
                "every configuration failed: {}",
                table.failures.iter().map(|f| format!("{}: {}", f.config, f.message)).collect::<Vec<_>>().join("; ")
            ))
        })?;
    Ok(SelectionReport {
        selections,
        winner,
        table,
    })
}

/// Options for [`select_model`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionSettings {
    pub mcmc: McmcSettings,
    pub n_chains: usize,
    pub seed: u64,
    pub scale_mc_error: bool,
}

/// Seed of the chains for one (configuration, rank); chain `k` then uses
/// stream `k`.
pub fn job_seed(master: u64, cfg: &ModelConfig) -> u64 {
    derive_seed(master, ((cfg.j() as u64) << 32) | cfg.rank as u64)
}

/// Fits every (configuration, rank) with `n_chains` chains, averages the
/// per-chain conditional DICs, picks a rank per configuration at the knee
/// and returns the configuration with the lowest knee DIC.
pub fn select_model(
    data: &LaggedData,
    configs: &[ModelConfig],
    ranks: &[usize],
    priors: &PriorSpec,
    settings: &SelectionSettings,
) -> Result<SelectionReport> {
    if configs.is_empty() || ranks.is_empty() {
        return Err(Error::InvalidParameter("need at least one configuration and one rank".into()));
    }
    if settings.n_chains == 0 {
        return Err(Error::InvalidParameter("need at least one chain".into()));
    }
    let mut pairs = Vec::new();
    for cfg in configs {
        for &r in ranks {
            let c = cfg.with_rank(r)?;
            if !pairs.contains(&c) {
                pairs.push(c);
            }
        }
    }
    let jobs: Vec<(usize, usize)> = (0..pairs.len())
        .flat_map(|i| (0..settings.n_chains).map(move |k| (i, k)))
        .collect();
    let results: Vec<Result<ChainDic>> = jobs
        .par_iter()
        .map(|&(i, k)| {
            let cfg = &pairs[i];
            let mut rng = RngStream::new(job_seed(settings.seed, cfg), k as u64);
            let draws = gibbs::run_chain(data, cfg, priors, &settings.mcmc, &mut rng)?;
            ChainDic::compute(k, &draws, data, priors)
        })
        .collect();

    let mut grouped: BTreeMap<usize, Vec<Result<ChainDic>>> = BTreeMap::new();
    for ((i, _), r) in jobs.into_iter().zip(results) {
        grouped.entry(i).or_default().push(r);
    }
    let mut table = DicTable::default();
    for (i, rs) in grouped {
        let cfg = pairs[i];
        match rs.into_iter().collect::<Result<Vec<_>>>() {
            Ok(chains) => table
                .entries
                .push(DicEntry::new(cfg, job_seed(settings.seed, &cfg), chains, settings.scale_mc_error)?),
            Err(e) => {
                warn!("{cfg} excluded from selection: {e}");
                table.failures.push(FailedJob {
                    config: cfg,
                    message: e.to_string(),
                });
            }
        }
    }
    select_from_table(table)
}

/// A table of mean DICs with configurations as rows and ranks as columns.
#[derive(Clone, Debug, PartialEq)]
pub struct DicGrid {
    pub ranks: Vec<usize>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl DicGrid {
    pub fn from_table(table: &DicTable) -> Self {
        let mut ranks: Vec<usize> = table.entries.iter().map(|e| e.rank).collect();
        ranks.sort_unstable();
        ranks.dedup();
        let rows = table
            .configurations()
            .into_iter()
            .map(|cfg| {
                let curve = table.curve(&cfg);
                let values = ranks
                    .iter()
                    .map(|r| curve.iter().find(|e| e.rank == *r).map_or(f64::NAN, |e| e.mean_dic))
                    .collect();
                (cfg.label(), values)
            })
            .collect();
        Self { ranks, rows }
    }

    /// Knee rank per row, skipping missing cells.
    pub fn knees(&self) -> Result<Vec<(String, usize)>> {
        self.rows
            .iter()
            .map(|(label, values)| {
                let (r, v): (Vec<usize>, Vec<f64>) = self
                    .ranks
                    .iter()
                    .zip(values)
                    .filter(|(_, v)| v.is_finite())
                    .map(|(r, v)| (*r, *v))
                    .unzip();
                Ok((label.clone(), kneedle_at(&r, &v)?))
            })
            .collect()
    }
}
