//! Output directory helpers and the run manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

static START: OnceLock<(Instant, u64)> = OnceLock::new();

/// Marks the start of the run for the manifest's wall time.
pub fn mark_start() {
    START.get_or_init(|| {
        let unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        (Instant::now(), unix)
    });
}

/// Tracks files written under one output directory.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
    started: Instant,
    started_unix: u64,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        mark_start();
        let (started, started_unix) = *START.get().expect("start time is set");
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
            started,
            started_unix,
        })
    }

    /// Registers `name` and returns its full path.
    pub fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.root.join(name)
    }

    pub fn create_file(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.path(name);
        let f = File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(BufWriter::new(f))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut w = self.create_file(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn csv_writer(&mut self, name: &str) -> Result<csv::Writer<BufWriter<File>>, CliError> {
        Ok(csv::Writer::from_writer(self.create_file(name)?))
    }

    /// Writes `manifest.json` listing everything written so far.
    pub fn finish(mut self, command: &str, cfg: &RunConfig, extra: serde_json::Value) -> Result<(), CliError> {
        let config_json = serde_json::to_string(cfg)?;
        let data_sha256 = match &cfg.data {
            Some(p) if command != "simulate" => Some(sha256_file(p)?),
            _ => None,
        };
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: hex_sha256(config_json.as_bytes()),
            data_sha256,
            run_config: cfg,
            seeds: SEED_DOC,
            started_unix: self.started_unix,
            wall_time_secs: self.started.elapsed().as_secs_f64(),
            outputs: std::mem::take(&mut self.written),
            details: extra,
        };
        let path = self.root.join("manifest.json");
        let mut w = BufWriter::new(File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?);
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

const SEED_DOC: &str = "ChaCha8 streams keyed by (seed, stream). simulate: dataset d uses \
(seed, d); an explosive draw is replaced by stream d + (attempt << 32). fit: chain k uses \
(seed, k). select: chain k of (j, rank) uses (derive_seed(seed, (j << 32) | rank), k).";

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    data_sha256: Option<String>,
    run_config: &'a RunConfig,
    seeds: &'a str,
    started_unix: u64,
    wall_time_secs: f64,
    outputs: Vec<String>,
    details: serde_json::Value,
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(hex_sha256(&bytes))
}
