//! Executes configured runs and persists their logs.
//!
//! Layout under the output root:
//!
//! ```text
//! <out_dir>/<run_name>/
//!   config.kv              resolved configuration snapshot
//!   seed_<s>/
//!     rounds.jsonl         header record + one JSON record per round
//!     manifest.json
//!   summary.json           per-seed bests and their mean
//! ```
//!
//! The round log contains no timestamps and every float comes from the
//! deterministic training path, so re-running a seed reproduces the file
//! byte for byte.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use catchfed_core::data::build_synthetic;
use catchfed_core::federation::run_training_with_augment;
use catchfed_core::metrics::RoundReport;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const LOG_FORMAT: &str = "catchfed-rounds";
pub const LOG_VERSION: u32 = 1;

/// Environment variable naming the output root; a relative `out_dir` is
/// resolved under it.
pub const OUT_ENV: &str = "CATCHFED_OUT";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub method: String,
    pub rounds: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub best_accuracy: f64,
    pub best_round: usize,
    pub final_accuracy: f64,
    pub best_pl_accuracy: f64,
    pub final_pl_accuracy: f64,
    pub final_wrong_label_ratio: f64,
    pub final_utilization_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_name: String,
    pub seed: u64,
    pub config_kv: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    /// Path of the round log, relative to the manifest's directory.
    pub rounds_log: String,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub run_name: String,
    pub seeds: Vec<u64>,
    pub per_seed_best_accuracy: Vec<f64>,
    pub mean_best_accuracy: f64,
    pub mean_final_accuracy: f64,
    pub mean_best_pl_accuracy: f64,
    pub mean_final_pl_accuracy: f64,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Resolve the run directory, honoring the output-root environment variable.
pub fn resolve_out_dir(config: &ExperimentConfig) -> PathBuf {
    let base = PathBuf::from(&config.out_dir);
    if base.is_absolute() {
        return base.join(&config.run_name);
    }
    match std::env::var_os(OUT_ENV) {
        Some(root) => PathBuf::from(root).join(base).join(&config.run_name),
        None => base.join(&config.run_name),
    }
}

pub fn summarize(reports: &[RoundReport]) -> CliResult<RunSummary> {
    let last = reports
        .last()
        .ok_or_else(|| CliError::Runtime("run produced no rounds".into()))?;
    let (best_round, best) = reports
        .iter()
        .map(|r| (r.round, r.test_accuracy))
        .fold((0, f64::NEG_INFINITY), |acc, (round, v)| {
            if v > acc.1 {
                (round, v)
            } else {
                acc
            }
        });
    Ok(RunSummary {
        best_accuracy: best,
        best_round,
        final_accuracy: last.test_accuracy,
        best_pl_accuracy: reports.iter().map(|r| r.pl_accuracy).fold(0.0, f64::max),
        final_pl_accuracy: last.pl_accuracy,
        final_wrong_label_ratio: last.wrong_label_ratio,
        final_utilization_ratio: last.utilization_ratio,
    })
}

/// Train one seed end to end, writing `rounds.jsonl` and `manifest.json`
/// under `<run_dir>/seed_<seed>/`.
pub fn run_experiment(
    config: &ExperimentConfig,
    seed: u64,
    run_dir: &Path,
) -> CliResult<RunManifest> {
    config.validate()?;
    let started = now_ms();
    let data = build_synthetic(&config.synthetic_spec(), seed)?;
    let run_cfg = config.run_config(seed);
    let augment = config.augment_config();
    let (_params, reports) = run_training_with_augment(&run_cfg, &data, &augment)?;

    let seed_dir = run_dir.join(format!("seed_{seed}"));
    fs::create_dir_all(&seed_dir)?;
    let log_name = "rounds.jsonl";
    let log_path = seed_dir.join(log_name);
    let mut w = BufWriter::new(fs::File::create(&log_path)?);
    let header = LogHeader {
        format: LOG_FORMAT.to_string(),
        version: LOG_VERSION,
        seed,
        method: config.method.name().to_string(),
        rounds: config.rounds,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for report in &reports {
        serde_json::to_writer(&mut w, report)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;

    let summary = summarize(&reports)?;
    let manifest = RunManifest {
        run_name: config.run_name.clone(),
        seed,
        config_kv: config.to_kv(),
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        rounds_log: log_name.to_string(),
        summary,
    };
    fs::write(
        seed_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// Run every configured seed and write the aggregate summary.
pub fn run_all_seeds(config: &ExperimentConfig, run_dir: &Path) -> CliResult<Vec<RunManifest>> {
    config.validate()?;
    fs::create_dir_all(run_dir)?;
    fs::write(run_dir.join("config.kv"), config.to_kv())?;
    let mut manifests = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        manifests.push(run_experiment(config, seed, run_dir)?);
    }
    let n = manifests.len() as f64;
    let summary = ExperimentSummary {
        run_name: config.run_name.clone(),
        seeds: config.seeds.clone(),
        per_seed_best_accuracy: manifests.iter().map(|m| m.summary.best_accuracy).collect(),
        mean_best_accuracy: manifests.iter().map(|m| m.summary.best_accuracy).sum::<f64>() / n,
        mean_final_accuracy: manifests.iter().map(|m| m.summary.final_accuracy).sum::<f64>() / n,
        mean_best_pl_accuracy: manifests
            .iter()
            .map(|m| m.summary.best_pl_accuracy)
            .sum::<f64>()
            / n,
        mean_final_pl_accuracy: manifests
            .iter()
            .map(|m| m.summary.final_pl_accuracy)
            .sum::<f64>()
            / n,
    };
    fs::write(
        run_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(manifests)
}

/// Parse a round log back into header and reports.
pub fn read_rounds_log(path: &Path) -> CliResult<(LogHeader, Vec<RoundReport>)> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: LogHeader = serde_json::from_str(
        lines
            .next()
            .ok_or_else(|| CliError::Runtime(format!("{} is empty", path.display())))?,
    )?;
    if header.format != LOG_FORMAT {
        return Err(CliError::Runtime(format!(
            "{} is not a round log (format {:?})",
            path.display(),
            header.format
        )));
    }
    let reports: Vec<RoundReport> = lines
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()?;
    Ok((header, reports))
}
