//! Plot-data export: rectangular CSVs assembled from round logs.

use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};
use crate::runner::{read_rounds_log, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportKind {
    /// One row per round per run: accuracy/utilization/loss curves.
    Curves,
    /// One row per calibration bin per selected round.
    Reliability,
    /// One row per confusion cell per selected round.
    Confusion,
}

impl ExportKind {
    pub fn parse(s: &str) -> CliResult<Self> {
        match s {
            "curves" => Ok(ExportKind::Curves),
            "reliability" => Ok(ExportKind::Reliability),
            "confusion" => Ok(ExportKind::Confusion),
            other => Err(CliError::Config(format!(
                "unknown export kind {other:?} (expected curves, reliability or confusion)"
            ))),
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            ExportKind::Curves => "curves.csv",
            ExportKind::Reliability => "reliability.csv",
            ExportKind::Confusion => "confusion.csv",
        }
    }
}

/// Locate manifests under the given inputs: a manifest file, a seed
/// directory, or a run directory containing `seed_*` subdirectories.
pub fn collect_manifests(inputs: &[PathBuf]) -> CliResult<Vec<(PathBuf, RunManifest)>> {
    let mut found = Vec::new();
    let mut missing = Vec::new();
    for input in inputs {
        let candidates: Vec<PathBuf> = if input.is_file() {
            vec![input.clone()]
        } else if input.join("manifest.json").is_file() {
            vec![input.join("manifest.json")]
        } else if input.is_dir() {
            let mut seeds: Vec<PathBuf> = std::fs::read_dir(input)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", input.display())))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| {
                    p.is_dir()
                        && p.file_name()
                            .and_then(|n| n.to_str())
                            .is_some_and(|n| n.starts_with("seed_"))
                        && p.join("manifest.json").is_file()
                })
                .map(|p| p.join("manifest.json"))
                .collect();
            seeds.sort();
            seeds
        } else {
            Vec::new()
        };
        if candidates.is_empty() {
            missing.push(input.display().to_string());
            continue;
        }
        for path in candidates {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            let manifest: RunManifest = serde_json::from_str(&text)?;
            found.push((path, manifest));
        }
    }
    if !missing.is_empty() {
        return Err(CliError::Runtime(format!(
            "no run manifests found under: {}",
            missing.join(", ")
        )));
    }
    Ok(found)
}

/// Write one CSV of the requested kind into `out_dir`; returns its path.
/// `rounds` filters which rounds are exported for the reliability and
/// confusion kinds (empty = all).
pub fn export_plot_data(
    inputs: &[PathBuf],
    kind: ExportKind,
    out_dir: &Path,
    rounds: &[usize],
) -> CliResult<PathBuf> {
    let manifests = collect_manifests(inputs)?;
    if manifests.is_empty() {
        return Err(CliError::Runtime("no manifests to export".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let out_path = out_dir.join(kind.file_name());
    let mut w = csv::Writer::from_path(&out_path).map_err(|e| CliError::Runtime(e.to_string()))?;
    let wanted = |round: usize| rounds.is_empty() || rounds.contains(&round);

    match kind {
        ExportKind::Curves => {
            w.write_record([
                "run",
                "seed",
                "round",
                "evaluated",
                "test_accuracy",
                "pl_accuracy",
                "pl_empty",
                "utilization_ratio",
                "wrong_label_ratio",
                "ece",
                "pseudo_selected",
                "unpseudo_selected",
                "unlabeled_total",
                "warmup_clients",
                "loss_server",
                "loss_pseudo",
                "loss_unpseudo",
                "loss_mixup",
            ])
            .map_err(|e| CliError::Runtime(e.to_string()))?;
            for (path, manifest) in &manifests {
                let log = path.parent().unwrap_or(Path::new(".")).join(&manifest.rounds_log);
                let (_, reports) = read_rounds_log(&log)?;
                for r in reports {
                    w.write_record([
                        manifest.run_name.clone(),
                        manifest.seed.to_string(),
                        r.round.to_string(),
                        r.evaluated.to_string(),
                        r.test_accuracy.to_string(),
                        r.pl_accuracy.to_string(),
                        r.pl_empty.to_string(),
                        r.utilization_ratio.to_string(),
                        r.wrong_label_ratio.to_string(),
                        r.ece.to_string(),
                        r.pseudo_selected.to_string(),
                        r.unpseudo_selected.to_string(),
                        r.unlabeled_total.to_string(),
                        r.warmup_clients.to_string(),
                        r.losses.server.to_string(),
                        r.losses.pseudo.to_string(),
                        r.losses.unpseudo.to_string(),
                        r.losses.mixup.to_string(),
                    ])
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
                }
            }
        }
        ExportKind::Reliability => {
            w.write_record([
                "run",
                "seed",
                "round",
                "bin_lower",
                "mean_confidence",
                "accuracy",
                "count",
            ])
            .map_err(|e| CliError::Runtime(e.to_string()))?;
            for (path, manifest) in &manifests {
                let log = path.parent().unwrap_or(Path::new(".")).join(&manifest.rounds_log);
                let (_, reports) = read_rounds_log(&log)?;
                for r in reports.iter().filter(|r| wanted(r.round)) {
                    for bin in &r.bin_stats {
                        w.write_record([
                            manifest.run_name.clone(),
                            manifest.seed.to_string(),
                            r.round.to_string(),
                            bin.lower_edge.to_string(),
                            bin.mean_confidence.to_string(),
                            bin.accuracy.to_string(),
                            bin.count.to_string(),
                        ])
                        .map_err(|e| CliError::Runtime(e.to_string()))?;
                    }
                }
            }
        }
        ExportKind::Confusion => {
            w.write_record(["run", "seed", "round", "true_class", "pseudo_class", "count"])
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            for (path, manifest) in &manifests {
                let log = path.parent().unwrap_or(Path::new(".")).join(&manifest.rounds_log);
                let (_, reports) = read_rounds_log(&log)?;
                for r in reports.iter().filter(|r| wanted(r.round)) {
                    let classes = (r.confusion.len() as f64).sqrt() as usize;
                    for t in 0..classes {
                        for p in 0..classes {
                            w.write_record([
                                manifest.run_name.clone(),
                                manifest.seed.to_string(),
                                r.round.to_string(),
                                t.to_string(),
                                p.to_string(),
                                r.confusion[t * classes + p].to_string(),
                            ])
                            .map_err(|e| CliError::Runtime(e.to_string()))?;
                        }
                    }
                }
            }
        }
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(out_path)
}
