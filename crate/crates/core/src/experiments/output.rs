//! CSV outputs and the run manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    pair_with_model, run_conditions, Aggregator, RecordSink, SweepConfig, SweepMode, SweepOutcome,
};
use crate::error::{Error, Result};
use crate::inference::TrajectoryRecord;
use crate::planners::PolicyCache;

pub const TRAJECTORY_FILE: &str = "trajectories.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const PAIRED_FILE: &str = "paired.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Streams serialized rows to a CSV file, header first.
pub struct CsvSink {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvSink {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            writer: csv::Writer::from_writer(BufWriter::new(file)),
            path,
        })
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

impl RecordSink for CsvSink {
    fn push(&mut self, record: &TrajectoryRecord) -> Result<()> {
        Ok(self.writer.serialize(record)?)
    }
}

/// Writes `rows` as CSV with a header row.
pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trajectory_csv(path: impl AsRef<Path>) -> Result<Vec<TrajectoryRecord>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Everything needed to regenerate a run's CSVs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub mode: SweepMode,
    pub status: String,
    pub error: Option<String>,
    /// Effective configuration after command-line overrides.
    pub config: serde_json::Value,
    /// SHA-256 of `config` serialized as compact JSON.
    pub config_sha256: String,
    pub source_config_path: Option<String>,
    pub source_config_sha256: Option<String>,
    pub master_seed: u64,
    pub eps_mode: String,
    pub smoothing_eps: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub jobs: Option<usize>,
    pub log_base: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub environments: Vec<EnvironmentEntry>,
    pub outputs: Vec<String>,
    pub outcome: Option<SweepOutcome>,
    pub cache_hits: usize,
    pub cache_misses: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentEntry {
    pub env_id: u64,
    pub fingerprint: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    /// Recomputes the hash of the stored configuration.
    pub fn recompute_config_hash(&self) -> String {
        sha256_hex(serde_json::to_string(&self.config).expect("json").as_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)? + "\n";
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Run-level settings that are not part of the sweep configuration.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub source_config_path: Option<PathBuf>,
    pub source_config_text: Option<String>,
    pub jobs: Option<usize>,
    pub log_base: String,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Runs one suite and writes `trajectories.csv`, `aggregate.csv` (plus
/// `paired.csv` for the Boltzmann-assumed suite) and `manifest.json` to
/// `options.out_dir`. The manifest is written first with status `running`
/// and rewritten when the run ends.
pub fn run_sweep(cfg: &SweepConfig, mode: SweepMode, options: &RunOptions) -> Result<RunManifest> {
    cfg.validate()?;
    let out = &options.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let config = serde_json::to_value(cfg)?;
    let mut manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        mode,
        status: "running".to_string(),
        error: None,
        config_sha256: sha256_hex(serde_json::to_string(&config)?.as_bytes()),
        config,
        source_config_path: options
            .source_config_path
            .as_ref()
            .map(|p| p.display().to_string()),
        source_config_sha256: options
            .source_config_text
            .as_ref()
            .map(|t| sha256_hex(t.as_bytes())),
        master_seed: cfg.master_seed,
        eps_mode: cfg.eps_mode.as_str().to_string(),
        smoothing_eps: cfg.smoothing_eps,
        tol: cfg.planner.tol,
        max_iters: cfg.planner.max_iters,
        jobs: options.jobs,
        log_base: if options.log_base.is_empty() {
            "nats".to_string()
        } else {
            options.log_base.clone()
        },
        started_unix: now_unix(),
        finished_unix: None,
        environments: Vec::new(),
        outputs: Vec::new(),
        outcome: None,
        cache_hits: 0,
        cache_misses: 0,
    };
    let manifest_path = out.join(MANIFEST_FILE);
    manifest.save(&manifest_path)?;

    let cache = PolicyCache::new();
    let result = write_outputs(cfg, mode, options, &cache, &mut manifest);
    let (hits, misses) = cache.stats();
    manifest.cache_hits = hits;
    manifest.cache_misses = misses;
    manifest.finished_unix = Some(now_unix());
    match result {
        Ok(()) => {
            manifest.status = "complete".to_string();
            manifest.save(&manifest_path)?;
            Ok(manifest)
        }
        Err(e) => {
            manifest.status = "failed".to_string();
            manifest.error = Some(e.to_string());
            manifest.save(&manifest_path)?;
            Err(e)
        }
    }
}

fn write_outputs(
    cfg: &SweepConfig,
    mode: SweepMode,
    options: &RunOptions,
    cache: &PolicyCache,
    manifest: &mut RunManifest,
) -> Result<()> {
    let base = options
        .source_config_path
        .as_ref()
        .and_then(|p| p.parent())
        .unwrap_or(Path::new("."));
    let envs = cfg.load_environments(base)?;
    manifest.environments = envs
        .iter()
        .map(|(id, e)| EnvironmentEntry {
            env_id: *id,
            fingerprint: format!("{:016x}", e.fingerprint()),
        })
        .collect();

    let out = &options.out_dir;
    let mut csv = CsvSink::create(out.join(TRAJECTORY_FILE))?;
    let mut agg = Aggregator::new();
    let outcome = run_conditions(cfg, &mode.conditions(cfg), &envs, cache, &mut [&mut csv, &mut agg])?;
    csv.finish()?;
    manifest.outputs.push(TRAJECTORY_FILE.to_string());

    let rows = agg.finish(cfg.resamples, cfg.master_seed);
    write_csv(out.join(AGGREGATE_FILE), &rows)?;
    manifest.outputs.push(AGGREGATE_FILE.to_string());
    if mode == SweepMode::BoltzmannMisspec {
        let baseline = cfg.misspec.baseline;
        let paired = pair_with_model(&rows, baseline.kind(), baseline.param());
        write_csv(out.join(PAIRED_FILE), &paired)?;
        manifest.outputs.push(PAIRED_FILE.to_string());
    }
    manifest.outcome = Some(outcome);
    std::io::stdout().flush().ok();
    Ok(())
}
