//! Subcommand implementations.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tvptvar::gibbs::{self, ChainDraws, McmcSettings};
use tvptvar::granger::{self, EdgeRule, GcAccumulator, GcProbCube};
use tvptvar::io::{self, format_f64, TruthDoc};
use tvptvar::model::{self, LaggedData, ModelConfig};
use tvptvar::selection::{self, ChainDic, DicGrid, DicVariant, SelectionSettings};
use tvptvar::Tensor3;

use crate::config::RunConfig;
use crate::output::OutputDir;
use crate::CliError;

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let sim = &cfg.simulation;
    let model_cfg = ModelConfig::new(sim.n, sim.p, sim.j, sim.rank).map_err(|e| CliError::Config(format!("simulation: {e}")))?;
    let priors = cfg.priors.resolve(sim.n)?;
    if sim.datasets == 0 {
        return Err(CliError::Config("simulation.datasets must be at least 1".into()));
    }
    if !(sim.q >= 0.0 && sim.q.is_finite()) {
        return Err(CliError::Config(format!("simulation.q = {} must be nonnegative", sim.q)));
    }
    let q = DVector::from_element(model_cfg.varying.map_or(0, |m| model_cfg.block_len(m)), sim.q);
    let sets = (0..sim.datasets as u64)
        .into_par_iter()
        .map(|d| model::generate_dataset(&model_cfg, &priors, &q, sim.t_len, cfg.seed, d))
        .collect::<Result<Vec<_>, _>>()?;

    let mut out = OutputDir::create(&cfg.output)?;
    let header = io::default_header(sim.n);
    let mut details = Vec::new();
    for (d, set) in sets.iter().enumerate() {
        io::write_matrix_csv_path(&out.path(&format!("dataset_{d:03}.csv")), &header, &set.data)?;
        out.write_json(&format!("truth_{d:03}.json"), &TruthDoc::from_truth(&set.truth, set.regenerations))?;
        details.push(json!({"dataset": d, "stream": set.truth.stream, "regenerations": set.regenerations}));
    }
    println!("wrote {} {} datasets to {}", sets.len(), model_cfg.label(), cfg.output.display());
    out.finish("simulate", cfg, json!({"config": model_cfg.label(), "datasets": details}))
}

/// Reads the data file and standardizes it when requested.
fn load_data(cfg: &RunConfig) -> Result<LoadedData, CliError> {
    let path = cfg.data_path()?;
    if !path.is_file() {
        return Err(CliError::Config(format!("data file {} does not exist", path.display())));
    }
    let (header, data) = io::read_matrix_csv_path(path)?;
    if !cfg.standardize {
        return Ok(LoadedData { header, data, transform: None });
    }
    let (z, transform) = io::standardize(&data)?;
    Ok(LoadedData { header, data: z, transform: Some(transform) })
}

struct LoadedData {
    header: Vec<String>,
    data: DMatrix<f64>,
    transform: Option<io::Standardization>,
}

impl LoadedData {
    /// Records the standardized data actually fitted and its transform.
    fn write_transform(&self, out: &mut OutputDir) -> Result<(), CliError> {
        if let Some(t) = &self.transform {
            io::write_matrix_csv_path(&out.path("data_used.csv"), &self.header, &self.data)?;
            out.write_json("standardization.json", t)?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct ChainSummary {
    chain: usize,
    seed: u64,
    stream: u64,
    n_draws: usize,
    elapsed_secs: f64,
    mean_loglik: f64,
    dic: ChainDic,
    omega_mean: Vec<Vec<f64>>,
    q_mean: Vec<f64>,
    /// Static loadings; the time-varying one holds its first time point.
    loading_means: [Vec<Vec<f64>>; 3],
}

#[derive(Serialize)]
struct VariantSummary {
    variant: &'static str,
    mean_dic: f64,
    mc_error: Option<f64>,
    per_chain: Vec<f64>,
}

#[derive(Serialize)]
struct FitSummary {
    config: ModelConfig,
    label: String,
    n_series: usize,
    modelled_len: usize,
    header: Vec<String>,
    dic: Vec<VariantSummary>,
    omega_mean: Vec<Vec<f64>>,
    q_mean: Vec<f64>,
    chains: Vec<ChainSummary>,
}

/// Layout of `chain_{k}_coefficients.bin`.
#[derive(Debug, Serialize, Deserialize)]
struct DrawLayout {
    n: usize,
    p: usize,
    modelled_len: usize,
    /// 1 for TVAR (one tensor per draw, constant over time), else `modelled_len`.
    tensors_per_draw: usize,
    draws_per_chain: Vec<usize>,
    files: Vec<String>,
    description: String,
}

fn pooled_mean<'a>(items: impl Iterator<Item = &'a DMatrix<f64>>) -> DMatrix<f64> {
    let mut n = 0.0;
    let mut sum: Option<DMatrix<f64>> = None;
    for m in items {
        n += 1.0;
        sum = Some(match sum {
            Some(s) => s + m,
            None => m.clone(),
        });
    }
    sum.map_or_else(|| DMatrix::zeros(0, 0), |s| s / n)
}

pub fn fit(cfg: &RunConfig) -> Result<(), CliError> {
    let loaded = load_data(cfg)?;
    let data = &loaded.data;
    let model_cfg = cfg.model.single(data.ncols())?;
    let priors = cfg.priors.resolve(model_cfg.n)?;
    let lagged = LaggedData::new(data, model_cfg.p)?;
    let settings = McmcSettings {
        granger_delta: cfg.granger.delta,
        keep_draws: cfg.mcmc.keep_draws || cfg.dump_draws,
        ..cfg.mcmc.clone()
    };
    log::info!("fitting {} with {} chains", model_cfg.label(), cfg.n_chains);
    let chains = gibbs::run_parallel_chains(&lagged, &model_cfg, &priors, &settings, cfg.n_chains, cfg.seed)?;
    let mut out = OutputDir::create(&cfg.output)?;
    loaded.write_transform(&mut out)?;

    let dics = chains
        .iter()
        .enumerate()
        .map(|(k, c)| ChainDic::compute(k, c, &lagged, &priors))
        .collect::<Result<Vec<_>, _>>()?;
    let mut summaries = Vec::new();
    for (c, dic) in chains.iter().zip(&dics) {
        summaries.push(ChainSummary {
            chain: c.stream as usize,
            seed: c.seed,
            stream: c.stream,
            n_draws: c.n_draws,
            elapsed_secs: c.elapsed_secs,
            mean_loglik: c.mean_loglik()?,
            dic: *dic,
            omega_mean: io::matrix_to_rows(&c.omega_mean()?),
            q_mean: c.q_mean()?.iter().copied().collect(),
            loading_means: c.loading_means()?.each_ref().map(io::matrix_to_rows),
        });
    }
    let mut variants = Vec::new();
    for v in [DicVariant::C1, DicVariant::C2, DicVariant::M] {
        let values: Option<Vec<f64>> = dics.iter().map(|d| d.get(v)).collect();
        if let Some(values) = values {
            variants.push(VariantSummary {
                variant: v.name(),
                mean_dic: values.iter().sum::<f64>() / values.len() as f64,
                mc_error: selection::mc_error(&values, cfg.scale_mc_error).ok(),
                per_chain: values,
            });
        }
    }
    let omegas = chains.iter().map(|c| c.omega_mean()).collect::<Result<Vec<_>, _>>()?;
    let qs = chains
        .iter()
        .map(|c| c.q_mean().map(|q| DMatrix::from_column_slice(q.len(), 1, q.as_slice())))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = FitSummary {
        config: model_cfg,
        label: model_cfg.label(),
        n_series: model_cfg.n,
        modelled_len: lagged.len(),
        header: loaded.header.clone(),
        dic: variants,
        omega_mean: io::matrix_to_rows(&pooled_mean(omegas.iter())),
        q_mean: pooled_mean(qs.iter()).iter().copied().collect(),
        chains: summaries,
    };
    out.write_json("summary.json", &summary)?;
    write_coefficients(&mut out, &chains)?;

    if let Some(delta) = cfg.granger.delta {
        let mut acc = GcAccumulator::new(delta, model_cfg.n, lagged.len())?;
        for c in &chains {
            if let Some(g) = &c.granger {
                acc.merge(g)?;
            }
        }
        out.write_json("granger_cube.json", &acc.probabilities()?)?;
    }
    if cfg.dump_draws {
        dump_draws(&mut out, &chains, &model_cfg)?;
    }
    for v in &summary.dic {
        println!(
            "{} DIC_{} = {} (MC error {})",
            summary.label,
            v.variant,
            format_f64(v.mean_dic),
            v.mc_error.map_or("n/a".into(), format_f64)
        );
    }
    out.finish(
        "fit",
        cfg,
        json!({"config": summary.label, "chains": chains.iter().map(|c| json!({"seed": c.seed, "stream": c.stream})).collect::<Vec<_>>()}),
    )
}

/// Pooled posterior mean coefficients as `t,to,from,lag,mean` rows; series
/// indices are 1-based, `t` is the 0-based modelled time (data row `t + P`).
fn write_coefficients(out: &mut OutputDir, chains: &[ChainDraws]) -> Result<(), CliError> {
    let per_chain = chains.iter().map(|c| c.coefficient_means()).collect::<Result<Vec<_>, _>>()?;
    let mut w = out.csv_writer("coefficients.csv")?;
    w.write_record(["t", "to", "from", "lag", "mean"])?;
    let k = per_chain.len() as f64;
    for t in 0..per_chain[0].len() {
        let [n1, n2, p] = per_chain[0][t].dims();
        for lag in 0..p {
            for from in 0..n2 {
                for to in 0..n1 {
                    let mean = per_chain.iter().map(|c| c[t].get(to, from, lag)).sum::<f64>() / k;
                    w.write_record([
                        t.to_string(),
                        (to + 1).to_string(),
                        (from + 1).to_string(),
                        (lag + 1).to_string(),
                        format_f64(mean),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn dump_draws(out: &mut OutputDir, chains: &[ChainDraws], cfg: &ModelConfig) -> Result<(), CliError> {
    let mut files = Vec::new();
    let mut counts = Vec::new();
    for (k, c) in chains.iter().enumerate() {
        let mut w = out.csv_writer(&format!("chain_{k}_trace.csv"))?;
        let n = cfg.n;
        let mut head = vec!["draw".to_string(), "loglik".into(), "marginal_loglik".into()];
        for i in 0..n {
            for j in i..n {
                head.push(format!("omega_{}_{}", i + 1, j + 1));
            }
        }
        head.extend((0..c.trace.first().map_or(0, |d| d.q.len())).map(|i| format!("q_{}", i + 1)));
        let [d1, d2, d3] = cfg.tensor_dims();
        for lag in 0..d3 {
            for from in 0..d2 {
                for to in 0..d1 {
                    head.push(format!("a{}_{}_{}_t{}", to + 1, from + 1, lag + 1, c.trace_time));
                }
            }
        }
        w.write_record(&head)?;
        for (d, tr) in c.trace.iter().enumerate() {
            let mut row = vec![d.to_string(), format_f64(tr.loglik), tr.marginal_loglik.map_or(String::new(), format_f64)];
            for i in 0..n {
                for j in i..n {
                    row.push(format_f64(tr.omega[(i, j)]));
                }
            }
            row.extend(tr.q.iter().map(|v| format_f64(*v)));
            row.extend(tr.coefficient.as_slice().iter().map(|v| format_f64(*v)));
            w.write_record(&row)?;
        }
        w.flush()?;

        let name = format!("chain_{k}_coefficients.bin");
        let mut bin = out.create_file(&name)?;
        let draws = c.draws.as_deref().unwrap_or(&[]);
        for state in draws {
            for a in state.coefficients(c.t_len) {
                for v in a.as_slice() {
                    bin.write_all(&v.to_le_bytes())?;
                }
            }
        }
        bin.flush()?;
        files.push(name);
        counts.push(draws.len());
    }
    let layout = DrawLayout {
        n: cfg.n,
        p: cfg.p,
        modelled_len: chains[0].t_len,
        tensors_per_draw: if cfg.varying.is_some() { chains[0].t_len } else { 1 },
        draws_per_chain: counts,
        files,
        description: "little-endian f64; for each stored draw, for each modelled time, the N x N x P \
                      coefficient tensor with the response index fastest, then predictor, then lag"
            .into(),
    };
    out.write_json("draws_layout.json", &layout)
}

pub fn select(cfg: &RunConfig) -> Result<(), CliError> {
    let loaded = load_data(cfg)?;
    let data = &loaded.data;
    let configs = cfg.model.configs(data.ncols())?;
    let priors = cfg.priors.resolve(data.ncols())?;
    let lagged = LaggedData::new(data, cfg.model.p)?;
    let settings = SelectionSettings {
        mcmc: McmcSettings {
            granger_delta: None,
            keep_draws: false,
            ..cfg.mcmc.clone()
        },
        n_chains: cfg.n_chains,
        seed: cfg.seed,
        scale_mc_error: cfg.scale_mc_error,
    };
    let report = selection::select_model(&lagged, &configs, &cfg.model.ranks, &priors, &settings)?;
    let mut out = OutputDir::create(&cfg.output)?;
    loaded.write_transform(&mut out)?;

    let mut w = out.csv_writer("dic_table.csv")?;
    w.write_record(["configuration", "j", "rank", "seed", "chains", "mean_dic_c1", "mc_error_c1", "mean_dic_c2", "mean_dic_m"])?;
    let mean_of = |v: Option<Vec<f64>>| v.map_or(String::new(), |v| format_f64(v.iter().sum::<f64>() / v.len() as f64));
    for e in &report.table.entries {
        w.write_record([
            e.config.with_rank(1).map_or_else(|_| e.config.label(), |c| c.label()),
            e.config.j().to_string(),
            e.rank.to_string(),
            e.seed.to_string(),
            e.chains.len().to_string(),
            format_f64(e.mean_dic),
            e.mc_error.map_or(String::new(), format_f64),
            mean_of(e.variant_values(DicVariant::C2)),
            mean_of(e.variant_values(DicVariant::M)),
        ])?;
    }
    w.flush()?;
    write_grid(&mut out, "dic_grid.csv", &DicGrid::from_table(&report.table))?;
    out.write_json("selection.json", &report)?;

    for s in &report.selections {
        println!(
            "{}: knee rank {} (DIC {}), minimum-DIC rank {}",
            s.config.with_rank(1).map_or_else(|_| s.config.label(), |c| c.label()),
            s.knee_rank,
            format_f64(s.knee_dic),
            s.min_dic_rank
        );
    }
    let w = report.winner();
    println!("selected {} with rank {}", w.config.label(), w.knee_rank);
    out.finish(
        "select",
        cfg,
        json!({"winner": w.config.label(), "rank": w.knee_rank, "failures": report.table.failures.len()}),
    )
}

fn write_grid(out: &mut OutputDir, name: &str, grid: &DicGrid) -> Result<(), CliError> {
    let mut w = out.csv_writer(name)?;
    let mut head = vec!["configuration".to_string()];
    head.extend(grid.ranks.iter().map(|r| r.to_string()));
    w.write_record(&head)?;
    for (label, values) in &grid.rows {
        let mut row = vec![label.clone()];
        row.extend(values.iter().map(|v| if v.is_finite() { format_f64(*v) } else { String::new() }));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `configuration,<rank>,<rank>,...` grid; empty cells are missing.
pub fn read_grid(path: &Path) -> Result<DicGrid, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let head = rdr.headers()?.clone();
    let ranks = head
        .iter()
        .skip(1)
        .map(|h| h.parse::<usize>().map_err(|_| CliError::Config(format!("{}: header '{h}' is not a rank", path.display()))))
        .collect::<Result<Vec<_>, _>>()?;
    if ranks.is_empty() {
        return Err(CliError::Config(format!("{}: no rank columns", path.display())));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != ranks.len() + 1 {
            return Err(CliError::Config(format!("{}:{line}: expected {} fields", path.display(), ranks.len() + 1)));
        }
        let values = rec
            .iter()
            .skip(1)
            .map(|c| {
                if c.is_empty() {
                    Ok(f64::NAN)
                } else {
                    c.parse::<f64>().map_err(|_| CliError::Config(format!("{}:{line}: '{c}' is not a number", path.display())))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((rec[0].to_string(), values));
    }
    Ok(DicGrid { ranks, rows })
}

pub fn replay(cfg: &RunConfig, grid_path: &Path) -> Result<(), CliError> {
    let grid = read_grid(grid_path)?;
    let knees = grid.knees()?;
    let mut out = OutputDir::create(&cfg.output)?;
    let mut w = out.csv_writer("knees.csv")?;
    w.write_record(["configuration", "knee_rank", "knee_dic", "min_dic_rank", "min_dic"])?;
    let mut rows = Vec::new();
    for ((label, knee), (_, values)) in knees.iter().zip(&grid.rows) {
        let at = |r: usize| grid.ranks.iter().position(|x| *x == r).map_or(f64::NAN, |i| values[i]);
        let (min_rank, min_dic) = grid
            .ranks
            .iter()
            .zip(values)
            .filter(|(_, v)| v.is_finite())
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(r, v)| (*r, *v))
            .unwrap_or((0, f64::NAN));
        w.write_record([label.clone(), knee.to_string(), format_f64(at(*knee)), min_rank.to_string(), format_f64(min_dic)])?;
        println!("{label}: knee rank {knee}, minimum-DIC rank {min_rank}");
        rows.push(json!({"configuration": label, "knee_rank": knee, "knee_dic": at(*knee), "min_dic_rank": min_rank}));
    }
    w.flush()?;
    let winner = rows
        .iter()
        .min_by(|a, b| a["knee_dic"].as_f64().unwrap_or(f64::INFINITY).total_cmp(&b["knee_dic"].as_f64().unwrap_or(f64::INFINITY)))
        .map(|r| r["configuration"].clone());
    let mut cfg = cfg.clone();
    cfg.data = Some(grid_path.to_path_buf());
    out.finish("select --replay", &cfg, json!({"grid": grid_path, "selections": rows, "winner": winner}))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let f = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Recomputes the probability cube from the binary coefficient dumps.
fn cube_from_dumps(fit_dir: &Path, delta: f64) -> Result<GcProbCube, CliError> {
    let layout_path = fit_dir.join("draws_layout.json");
    if !layout_path.is_file() {
        return Err(CliError::Config(format!(
            "recomputing at a new delta needs draw dumps, but {} is missing (rerun fit with --dump-draws)",
            layout_path.display()
        )));
    }
    let layout: DrawLayout = read_json(&layout_path)?;
    let dims = [layout.n, layout.n, layout.p];
    let per_tensor = layout.n * layout.n * layout.p;
    let mut acc = GcAccumulator::new(delta, layout.n, layout.modelled_len)?;
    let mut buf = vec![0u8; per_tensor * layout.tensors_per_draw * 8];
    for (file, draws) in layout.files.iter().zip(&layout.draws_per_chain) {
        let path = fit_dir.join(file);
        let mut r = BufReader::new(File::open(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?);
        for _ in 0..*draws {
            r.read_exact(&mut buf).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let values: Vec<f64> = buf.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
            let tensors = values
                .chunks_exact(per_tensor)
                .map(|c| Tensor3::from_vec(dims, c.to_vec()))
                .collect::<Result<Vec<_>, _>>()?;
            acc.add_draw(&tensors)?;
        }
    }
    Ok(acc.probabilities()?)
}

pub fn granger(cfg: &RunConfig, fit_dir: &Path, delta_flag: Option<f64>) -> Result<(), CliError> {
    let cube_path = fit_dir.join("granger_cube.json");
    let cube = match delta_flag {
        Some(d) => cube_from_dumps(fit_dir, d)?,
        None if cube_path.is_file() => read_json(&cube_path)?,
        None => return Err(CliError::Config(format!("{} has no granger_cube.json; pass --delta to recompute from dumps", fit_dir.display()))),
    };
    let rule = match cfg.granger.top_k {
        Some(k) => EdgeRule::TopK(k),
        None => EdgeRule::Threshold(cfg.granger.threshold),
    };
    let mut out = OutputDir::create(&cfg.output)?;
    let mut edges = out.csv_writer("edges.csv")?;
    edges.write_record(["t", "from", "to", "probability"])?;
    let mut counts = Vec::with_capacity(cube.t_len);
    for t in 0..cube.t_len {
        let net = granger::gc_network(&cube, t, rule)?;
        for e in &net.edges {
            edges.write_record([t.to_string(), (e.from + 1).to_string(), (e.to + 1).to_string(), format_f64(e.probability)])?;
        }
        counts.push(net.edges.len());
    }
    edges.flush()?;
    drop(edges);
    let mut w = out.csv_writer("counts.csv")?;
    w.write_record(["t", "count"])?;
    for (t, c) in counts.iter().enumerate() {
        w.write_record([t.to_string(), c.to_string()])?;
    }
    w.flush()?;
    for &t in &cfg.granger.dot_times {
        let net = granger::gc_network(&cube, t, rule)?;
        out.write_text(&format!("network_t{t}.dot"), &net.to_dot(cube.n))?;
    }
    if delta_flag.is_some() {
        out.write_json("granger_cube.json", &cube)?;
    }
    let total: usize = counts.iter().sum();
    println!(
        "{total} edges over {} time points (delta {}, {} draws)",
        cube.t_len,
        cube.delta,
        cube.draws
    );
    let mut cfg = cfg.clone();
    cfg.data = Some(if delta_flag.is_some() { fit_dir.join("draws_layout.json") } else { cube_path });
    out.finish("granger", &cfg, json!({"fit_dir": fit_dir, "delta": cube.delta, "draws": cube.draws, "rule": rule}))
}

pub fn standardize(cfg: &RunConfig) -> Result<(), CliError> {
    let path = cfg.data_path()?;
    if !path.is_file() {
        return Err(CliError::Config(format!("data file {} does not exist", path.display())));
    }
    let (header, data) = io::read_matrix_csv_path(path)?;
    let (z, transform) = io::standardize(&data)?;
    let mut out = OutputDir::create(&cfg.output)?;
    io::write_matrix_csv_path(&out.path("standardized.csv"), &header, &z)?;
    out.write_json("standardization.json", &transform)?;
    println!("standardized {} x {} matrix", z.nrows(), z.ncols());
    out.finish("standardize", cfg, json!({"rows": z.nrows(), "columns": z.ncols()}))
}
