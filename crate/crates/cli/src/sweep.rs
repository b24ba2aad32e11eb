//! Sweep driver: one run per (axis value, seed), with a comparison table.

use std::fs;
use std::path::Path;

use catchfed_core::federation::MethodMode;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::runner::{run_all_seeds, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Method,
    EnergyThreshold,
    UnpseudoRatio,
}

impl SweepAxis {
    pub fn parse(s: &str) -> CliResult<Self> {
        match s {
            "method" => Ok(SweepAxis::Method),
            "energy_threshold" => Ok(SweepAxis::EnergyThreshold),
            "mu" | "unpseudo_ratio" => Ok(SweepAxis::UnpseudoRatio),
            other => Err(CliError::Config(format!(
                "unknown sweep axis {other:?} (expected method, energy_threshold or mu)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Method => "method",
            SweepAxis::EnergyThreshold => "energy_threshold",
            SweepAxis::UnpseudoRatio => "mu",
        }
    }

    /// Apply one axis value to a copy of the base configuration.
    fn apply(self, base: &ExperimentConfig, value: &str) -> CliResult<ExperimentConfig> {
        let mut cfg = base.clone();
        match self {
            SweepAxis::Method => {
                cfg.method = MethodMode::parse(value).map_err(|e| CliError::Config(e.to_string()))?;
            }
            SweepAxis::EnergyThreshold => {
                cfg.energy_threshold = value
                    .parse()
                    .map_err(|e| CliError::Config(format!("energy_threshold {value:?}: {e}")))?;
            }
            SweepAxis::UnpseudoRatio => {
                cfg.unpseudo_ratio = value
                    .parse()
                    .map_err(|e| CliError::Config(format!("mu {value:?}: {e}")))?;
            }
        }
        let safe: String = value
            .chars()
            .map(|c| if c.is_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
            .collect();
        cfg.run_name = format!("{}_{safe}", self.name());
        Ok(cfg)
    }
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub value: String,
    pub manifests: Vec<RunManifest>,
    pub error: Option<String>,
}

/// Execute the sweep under `<sweep_dir>/<axis>_<value>/...`, writing
/// `comparison.csv` (per seed) and `summary.csv` (per value, seed-averaged).
/// A failing value is recorded and the sweep continues.
pub fn run_sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
    sweep_dir: &Path,
) -> CliResult<Vec<SweepOutcome>> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    base.validate()?;
    fs::create_dir_all(sweep_dir)?;
    let mut outcomes = Vec::with_capacity(values.len());
    for value in values {
        let outcome = match axis.apply(base, value) {
            Ok(cfg) => {
                let run_dir = sweep_dir.join(&cfg.run_name);
                match run_all_seeds(&cfg, &run_dir) {
                    Ok(manifests) => SweepOutcome {
                        value: value.clone(),
                        manifests,
                        error: None,
                    },
                    Err(e) => SweepOutcome {
                        value: value.clone(),
                        manifests: Vec::new(),
                        error: Some(e.to_string()),
                    },
                }
            }
            Err(e) => SweepOutcome {
                value: value.clone(),
                manifests: Vec::new(),
                error: Some(e.to_string()),
            },
        };
        outcomes.push(outcome);
    }
    write_comparison(&outcomes, axis, sweep_dir)?;
    Ok(outcomes)
}

fn write_comparison(outcomes: &[SweepOutcome], axis: SweepAxis, dir: &Path) -> CliResult<()> {
    let mut per_seed = csv::Writer::from_path(dir.join("comparison.csv"))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    per_seed
        .write_record([
            axis.name(),
            "seed",
            "best_accuracy",
            "final_accuracy",
            "best_pl_accuracy",
            "status",
        ])
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    for o in outcomes {
        if let Some(err) = &o.error {
            per_seed
                .write_record([o.value.as_str(), "-", "-", "-", "-", err.as_str()])
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            continue;
        }
        for m in &o.manifests {
            per_seed
                .write_record([
                    o.value.clone(),
                    m.seed.to_string(),
                    m.summary.best_accuracy.to_string(),
                    m.summary.final_accuracy.to_string(),
                    m.summary.best_pl_accuracy.to_string(),
                    "ok".to_string(),
                ])
                .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
    }
    per_seed.flush().map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut summary = csv::Writer::from_path(dir.join("summary.csv"))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    summary
        .write_record([axis.name(), "mean_best_accuracy", "mean_final_accuracy", "seeds"])
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    for o in outcomes {
        if o.manifests.is_empty() {
            summary
                .write_record([o.value.as_str(), "-", "-", "0"])
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            continue;
        }
        let n = o.manifests.len() as f64;
        let best = o.manifests.iter().map(|m| m.summary.best_accuracy).sum::<f64>() / n;
        let fin = o.manifests.iter().map(|m| m.summary.final_accuracy).sum::<f64>() / n;
        summary
            .write_record([
                o.value.clone(),
                best.to_string(),
                fin.to_string(),
                o.manifests.len().to_string(),
            ])
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    summary.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failing_value_is_recorded_and_sweep_continues() {
        let base = ExperimentConfig {
            rounds: 1,
            clients: 2,
            participation: 1.0,
            classes: 3,
            dims: 4,
            per_class: 30,
            labeled: 6,
            train_iter: 2,
            warmup_iter: 2,
            server_epochs: 1,
            hidden: vec![6],
            seeds: vec![1],
            ..ExperimentConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let outcomes = run_sweep(
            &base,
            SweepAxis::Method,
            &["not_a_method".to_string(), "fixed_baseline".to_string()],
            dir.path(),
        )
        .unwrap();
        assert!(outcomes[0].error.is_some());
        assert!(outcomes[0].manifests.is_empty());
        assert!(outcomes[1].error.is_none());
        assert_eq!(outcomes[1].manifests.len(), 1);
        let table = std::fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
        assert!(table.contains("not_a_method"));
        assert!(table.contains("fixed_baseline"));
    }
}
