//! `tvptvar`: simulate, fit, select and analyse TVP-TVAR models.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration or input
//! validation error, 3 numerical failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;
use tvptvar::gibbs::QShapeRule;

use crate::config::{parse_list, RunConfig, UsizeList};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<tvptvar::Error> for CliError {
    fn from(e: tvptvar::Error) -> Self {
        use tvptvar::Error as E;
        match &e {
            _ if e.is_numerical() => CliError::Numerical(e.to_string()),
            E::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            CliError::Io(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "tvptvar", version, about = "Bayesian time-varying parameter tensor VAR")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic datasets with known ground truth.
    Simulate(Overrides),
    /// Run parallel Gibbs chains for one configuration and rank.
    Fit(Overrides),
    /// Choose configuration and rank by DIC with knee-point detection.
    Select {
        #[command(flatten)]
        common: Overrides,
        /// Run knee detection on an existing configuration x rank DIC grid CSV instead of fitting.
        #[arg(long, value_name = "CSV")]
        replay: Option<PathBuf>,
    },
    /// Granger-causality edges and counts from a fit directory.
    Granger {
        #[command(flatten)]
        common: Overrides,
        /// Output directory of a previous `fit`.
        #[arg(long, value_name = "DIR")]
        fit_dir: PathBuf,
    },
    /// Center and scale each column of a CSV to unit sample standard deviation.
    Standardize(Overrides),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum QShapeArg {
    HalfLength,
    HalfIncrements,
}

/// Flags mirroring [`RunConfig`] fields; each overrides the config file.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// JSON run configuration, or a manifest.json of an earlier run.
    #[arg(long, short = 'c', value_name = "FILE")]
    config: Option<PathBuf>,
    /// Input CSV (T rows x N columns with a header row).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,

    #[arg(long, help_heading = "Simulation")]
    sim_n: Option<usize>,
    #[arg(long, help_heading = "Simulation")]
    sim_p: Option<usize>,
    #[arg(long, help_heading = "Simulation")]
    sim_j: Option<usize>,
    #[arg(long, help_heading = "Simulation")]
    sim_rank: Option<usize>,
    #[arg(long, help_heading = "Simulation")]
    sim_q: Option<f64>,
    #[arg(long, help_heading = "Simulation")]
    sim_t_len: Option<usize>,
    #[arg(long, help_heading = "Simulation")]
    datasets: Option<usize>,

    /// Lag order.
    #[arg(long, short = 'p', help_heading = "Model")]
    lags: Option<usize>,
    /// Time-varying loadings to consider, e.g. "0-3" or "1" (0 = TVAR).
    #[arg(long, value_parser = parse_list, help_heading = "Model")]
    j: Option<UsizeList>,
    /// CP ranks, e.g. "1-9" or "3".
    #[arg(long, value_parser = parse_list, help_heading = "Model")]
    ranks: Option<UsizeList>,

    #[arg(long, help_heading = "Priors")]
    sigma2: Option<f64>,
    #[arg(long, help_heading = "Priors")]
    nu: Option<f64>,
    #[arg(long, help_heading = "Priors")]
    ig_shape: Option<f64>,
    #[arg(long, help_heading = "Priors")]
    ig_scale: Option<f64>,

    #[arg(long, help_heading = "MCMC")]
    n_iter: Option<usize>,
    #[arg(long, help_heading = "MCMC")]
    burn_in: Option<usize>,
    #[arg(long, help_heading = "MCMC")]
    thin: Option<usize>,
    #[arg(long, help_heading = "MCMC")]
    n_chains: Option<usize>,
    /// Inverse-gamma shape of the random-walk variance update.
    #[arg(long, value_enum, help_heading = "MCMC")]
    q_shape: Option<QShapeArg>,
    /// Record the integrated likelihood per draw (enables the marginal DIC).
    #[arg(long, help_heading = "MCMC")]
    track_marginal: bool,
    /// Modelled time index traced per draw.
    #[arg(long, help_heading = "MCMC")]
    trace_time: Option<usize>,

    #[arg(long, help_heading = "Flags")]
    standardize: bool,
    /// Write per-chain traces and binary coefficient draws.
    #[arg(long, help_heading = "Flags")]
    dump_draws: bool,
    /// Divide the across-chain DIC standard deviation by sqrt(chains).
    #[arg(long, help_heading = "Flags")]
    scale_mc_error: bool,

    /// Coefficient magnitude threshold.
    #[arg(long, help_heading = "Granger")]
    delta: Option<f64>,
    /// Edge probability threshold (strict).
    #[arg(long, help_heading = "Granger")]
    threshold: Option<f64>,
    #[arg(long, help_heading = "Granger")]
    top_k: Option<usize>,
    /// Modelled time indices at which to write DOT graphs, e.g. "0,50,100".
    #[arg(long, value_parser = parse_list, help_heading = "Granger")]
    dot_times: Option<UsizeList>,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag { c.$($field).+ = v.clone().into(); })*
            };
        }
        set!(
            data => data, output => output, seed => seed,
            sim_n => simulation.n, sim_p => simulation.p, sim_j => simulation.j,
            sim_rank => simulation.rank, sim_q => simulation.q, sim_t_len => simulation.t_len,
            datasets => simulation.datasets,
            lags => model.p, j => model.j, ranks => model.ranks,
            sigma2 => priors.sigma2, ig_shape => priors.ig_shape, ig_scale => priors.ig_scale,
            n_iter => mcmc.n_iter, burn_in => mcmc.burn_in, thin => mcmc.thin,
            n_chains => n_chains, threshold => granger.threshold, dot_times => granger.dot_times,
        );
        if let Some(v) = self.threads {
            c.threads = Some(v);
        }
        if let Some(v) = self.nu {
            c.priors.nu = Some(v);
        }
        if let Some(v) = self.trace_time {
            c.mcmc.trace_time = Some(v);
        }
        if let Some(v) = self.delta {
            c.granger.delta = Some(v);
        }
        if let Some(v) = self.top_k {
            c.granger.top_k = Some(v);
        }
        if let Some(q) = self.q_shape {
            c.mcmc.q_shape = match q {
                QShapeArg::HalfLength => QShapeRule::HalfLength,
                QShapeArg::HalfIncrements => QShapeRule::HalfIncrements,
            };
        }
        c.mcmc.track_marginal |= self.track_marginal;
        c.standardize |= self.standardize;
        c.dump_draws |= self.dump_draws;
        c.scale_mc_error |= self.scale_mc_error;
        c.validate()?;
        Ok(c)
    }
}

fn init_threads(cfg: &RunConfig) -> Result<(), CliError> {
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (name, overrides) = match &cli.command {
        Command::Simulate(o) => ("simulate", o),
        Command::Fit(o) => ("fit", o),
        Command::Select { common, .. } => ("select", common),
        Command::Granger { common, .. } => ("granger", common),
        Command::Standardize(o) => ("standardize", o),
    };
    let cfg = overrides.resolve()?;
    init_threads(&cfg)?;
    log::info!("{name}: output directory {}", cfg.output.display());
    match &cli.command {
        Command::Simulate(_) => commands::simulate(&cfg),
        Command::Fit(_) => commands::fit(&cfg),
        Command::Select { replay: Some(grid), .. } => commands::replay(&cfg, grid),
        Command::Select { replay: None, .. } => commands::select(&cfg),
        Command::Granger { fit_dir, .. } => commands::granger(&cfg, fit_dir, overrides.delta),
        Command::Standardize(_) => commands::standardize(&cfg),
    }
}

fn main() -> ExitCode {
    output::mark_start();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
