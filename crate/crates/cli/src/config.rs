//! Run configuration: a JSON file whose fields can be overridden by flags.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use tvptvar::gibbs::McmcSettings;
use tvptvar::io;
use tvptvar::{ModelConfig, PriorSpec};

use crate::CliError;

/// Hyperparameters; `nu` and `scale` default to `N + 3` and the identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorDoc {
    pub sigma2: f64,
    pub nu: Option<f64>,
    /// Row-major inverse-Wishart scale.
    pub scale: Option<Vec<Vec<f64>>>,
    pub ig_shape: f64,
    pub ig_scale: f64,
}

impl Default for PriorDoc {
    fn default() -> Self {
        Self {
            sigma2: 0.5,
            nu: None,
            scale: None,
            ig_shape: 0.01,
            ig_scale: 0.01,
        }
    }
}

impl PriorDoc {
    pub fn resolve(&self, n: usize) -> Result<PriorSpec, CliError> {
        let scale = match &self.scale {
            Some(rows) => io::rows_to_matrix(rows).map_err(|e| CliError::Config(format!("priors.scale: {e}")))?,
            None => DMatrix::identity(n, n),
        };
        let spec = PriorSpec {
            sigma2: self.sigma2,
            nu: self.nu.unwrap_or(n as f64 + 3.0),
            scale,
            ig_shape: self.ig_shape,
            ig_scale: self.ig_scale,
        };
        spec.validate(n).map_err(|e| CliError::Config(format!("priors: {e}")))?;
        Ok(spec)
    }
}

/// Model family to fit; `N` comes from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDoc {
    pub p: usize,
    /// Time-varying loading per configuration, 0 for TVAR.
    pub j: Vec<usize>,
    pub ranks: Vec<usize>,
}

impl Default for ModelDoc {
    fn default() -> Self {
        Self {
            p: 1,
            j: vec![0, 1, 2, 3],
            ranks: vec![1],
        }
    }
}

impl ModelDoc {
    pub fn configs(&self, n: usize) -> Result<Vec<ModelConfig>, CliError> {
        let rank = *self.ranks.first().ok_or_else(|| CliError::Config("model.ranks is empty".into()))?;
        if self.j.is_empty() {
            return Err(CliError::Config("model.j is empty".into()));
        }
        self.j
            .iter()
            .map(|&j| ModelConfig::new(n, self.p, j, rank).map_err(|e| CliError::Config(format!("model: {e}"))))
            .collect()
    }

    /// The single configuration a fit needs.
    pub fn single(&self, n: usize) -> Result<ModelConfig, CliError> {
        if self.j.len() != 1 || self.ranks.len() != 1 {
            return Err(CliError::Config(format!(
                "fit needs exactly one j and one rank, got j = {:?}, ranks = {:?}",
                self.j, self.ranks
            )));
        }
        Ok(self.configs(n)?[0])
    }
}

/// Synthetic data generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationDoc {
    pub n: usize,
    pub p: usize,
    pub j: usize,
    pub rank: usize,
    /// Common random-walk variance of the time-varying margins.
    pub q: f64,
    pub t_len: usize,
    pub datasets: usize,
}

impl Default for SimulationDoc {
    fn default() -> Self {
        Self {
            n: 3,
            p: 3,
            j: 1,
            rank: 3,
            q: 0.01,
            t_len: 200,
            datasets: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrangerDoc {
    /// Coefficient magnitude threshold δ; `None` disables accumulation.
    pub delta: Option<f64>,
    /// Probability threshold p* (strict).
    pub threshold: f64,
    /// Keep the `k` most probable edges instead of thresholding.
    pub top_k: Option<usize>,
    /// Modelled time indices at which to write DOT graphs.
    pub dot_times: Vec<usize>,
}

impl Default for GrangerDoc {
    fn default() -> Self {
        Self {
            delta: Some(0.01),
            threshold: 0.999,
            top_k: None,
            dot_times: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `T x N` CSV with a header row.
    pub data: Option<PathBuf>,
    pub simulation: SimulationDoc,
    pub model: ModelDoc,
    pub priors: PriorDoc,
    pub mcmc: McmcSettings,
    pub n_chains: usize,
    pub seed: u64,
    pub output: PathBuf,
    pub standardize: bool,
    pub dump_draws: bool,
    pub scale_mc_error: bool,
    pub granger: GrangerDoc,
    /// Worker threads; defaults to the number of cores.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            simulation: SimulationDoc::default(),
            model: ModelDoc::default(),
            priors: PriorDoc::default(),
            mcmc: McmcSettings::default(),
            n_chains: 4,
            seed: 1,
            output: PathBuf::from("out"),
            standardize: false,
            dump_draws: false,
            scale_mc_error: false,
            granger: GrangerDoc::default(),
            threads: None,
        }
    }
}

#[derive(Deserialize)]
struct ManifestShape {
    run_config: RunConfig,
}

impl RunConfig {
    /// Reads a config file, or the config embedded in a run manifest.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| located(path, e))?;
        if value.get("run_config").is_some() {
            let m: ManifestShape = serde_json::from_str(&text).map_err(|e| located(path, e))?;
            Ok(m.run_config)
        } else {
            serde_json::from_str(&text).map_err(|e| located(path, e))
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.mcmc.validate().map_err(|e| CliError::Config(format!("mcmc: {e}")))?;
        if self.n_chains == 0 {
            return Err(CliError::Config("n_chains must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        if let Some(d) = self.granger.delta {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(CliError::Config(format!("granger.delta = {d} must be nonnegative")));
            }
        }
        if !(0.0..=1.0).contains(&self.granger.threshold) {
            return Err(CliError::Config("granger.threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn data_path(&self) -> Result<&Path, CliError> {
        self.data.as_deref().ok_or_else(|| CliError::Config("no data file given (--data or \"data\")".into()))
    }
}

fn located(path: &Path, e: serde_json::Error) -> CliError {
    CliError::Config(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
}

/// Comma-separated integers and inclusive ranges as a single flag value.
#[derive(Clone, Debug, PartialEq)]
pub struct UsizeList(pub Vec<usize>);

impl From<UsizeList> for Vec<usize> {
    fn from(l: UsizeList) -> Self {
        l.0
    }
}

/// Parses `"1-9"`, `"2,4,6"` or a mix such as `"1-3,5"`.
pub fn parse_list(s: &str) -> Result<UsizeList, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) = (
                    a.trim().parse().map_err(|_| format!("bad range start in '{part}'"))?,
                    b.trim().parse().map_err(|_| format!("bad range end in '{part}'"))?,
                );
                if a > b {
                    return Err(format!("empty range '{part}'"));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| format!("'{part}' is not a nonnegative integer"))?),
        }
    }
    if out.is_empty() {
        return Err("empty list".into());
    }
    Ok(UsizeList(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_syntax() {
        assert_eq!(parse_list("1-3,5").unwrap().0, vec![1, 2, 3, 5]);
        assert_eq!(parse_list("0").unwrap().0, vec![0]);
        assert!(parse_list("3-1").is_err());
        assert!(parse_list("x").is_err());
    }

    #[test]
    fn defaults_round_trip_through_json() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: RunConfig = serde_json::from_str(r#"{"seed": 9, "model": {"p": 4}}"#).unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.model.p, 4);
        assert_eq!(partial.model.j, vec![0, 1, 2, 3]);
    }

    #[test]
    fn unknown_fields_are_rejected_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, "{\n  \"seed\": 1,\n  \"sed\": 2\n}").unwrap();
        match RunConfig::load(&path) {
            Err(CliError::Config(msg)) => assert!(msg.contains(":3:"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }
}
