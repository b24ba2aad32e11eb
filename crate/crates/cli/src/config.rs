//! Experiment configuration: a flat `key = value` file, one key per line,
//! overridable field-by-field from the command line. Unknown keys are
//! rejected and validation reports every offending key at once.

use std::fmt::Write as _;

use catchfed_core::data::{AugmentConfig, PartitionMode, SyntheticSpec};
use catchfed_core::federation::{MethodMode, RunConfig, ServerPasses, WeightScheme};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    // Round loop.
    pub rounds: usize,
    pub clients: usize,
    pub participation: f64,
    pub server_mode: ServerMode,
    pub server_epochs: usize,
    pub server_iter: usize,
    pub server_batch: usize,
    pub train_iter: usize,
    pub warmup_iter: usize,
    pub client_batch: usize,
    pub unpseudo_ratio: f64,
    pub confidence_threshold: f64,
    pub energy_threshold: f64,
    pub temperature: f64,
    pub mixup_alpha: f64,
    pub method: MethodMode,
    pub hidden: Vec<usize>,
    pub feature_norm: bool,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub min_lr_factor: f64,
    pub aggregation: WeightScheme,
    pub aggregation_momentum: f64,
    pub eval_every: usize,
    // Synthetic data.
    pub classes: usize,
    pub dims: usize,
    pub per_class: usize,
    pub separation: f64,
    pub spread: f64,
    pub labeled: usize,
    pub test_fraction: f64,
    pub partition: Partition,
    pub alpha: f64,
    pub weak_noise: f64,
    pub strong_noise: f64,
    pub strong_mask: f64,
    // Driver.
    pub seeds: Vec<u64>,
    pub run_name: String,
    pub out_dir: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServerMode {
    Epochs,
    Iterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Iid,
    Dirichlet,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            rounds: 60,
            clients: 20,
            participation: 0.25,
            server_mode: ServerMode::Epochs,
            server_epochs: 3,
            server_iter: 50,
            server_batch: 10,
            train_iter: 30,
            warmup_iter: 30,
            client_batch: 10,
            unpseudo_ratio: 1.0,
            confidence_threshold: 0.95,
            energy_threshold: -5.0,
            temperature: 1.0,
            mixup_alpha: 0.75,
            method: MethodMode::Catchfed,
            hidden: vec![64, 64],
            feature_norm: false,
            learning_rate: 0.03,
            momentum: 0.9,
            weight_decay: 5e-4,
            min_lr_factor: 1e-4,
            aggregation: WeightScheme::DataSize,
            aggregation_momentum: 0.5,
            eval_every: 1,
            classes: 6,
            dims: 16,
            per_class: 600,
            separation: 2.2,
            spread: 1.2,
            labeled: 30,
            test_fraction: 0.2,
            partition: Partition::Iid,
            alpha: 0.3,
            weak_noise: 0.05,
            strong_noise: 0.2,
            strong_mask: 0.2,
            seeds: vec![1, 2, 3],
            run_name: "run".to_string(),
            out_dir: "runs".to_string(),
        }
    }
}

fn join_usizes(v: &[usize]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn join_u64s(v: &[u64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl ExperimentConfig {
    /// Serialize to the `key = value` form. `parse(to_kv())` is the identity
    /// on a resolved configuration.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# catchfed experiment configuration");
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("rounds", self.rounds.to_string());
        kv("clients", self.clients.to_string());
        kv("participation", self.participation.to_string());
        kv(
            "server_mode",
            match self.server_mode {
                ServerMode::Epochs => "epochs".into(),
                ServerMode::Iterations => "iterations".into(),
            },
        );
        kv("server_epochs", self.server_epochs.to_string());
        kv("server_iter", self.server_iter.to_string());
        kv("server_batch", self.server_batch.to_string());
        kv("train_iter", self.train_iter.to_string());
        kv("warmup_iter", self.warmup_iter.to_string());
        kv("client_batch", self.client_batch.to_string());
        kv("unpseudo_ratio", self.unpseudo_ratio.to_string());
        kv("confidence_threshold", self.confidence_threshold.to_string());
        kv("energy_threshold", self.energy_threshold.to_string());
        kv("temperature", self.temperature.to_string());
        kv("mixup_alpha", self.mixup_alpha.to_string());
        kv("method", self.method.name().into());
        kv("hidden", join_usizes(&self.hidden));
        kv("feature_norm", self.feature_norm.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("momentum", self.momentum.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("min_lr_factor", self.min_lr_factor.to_string());
        kv(
            "aggregation",
            match self.aggregation {
                WeightScheme::DataSize => "data_size".into(),
                WeightScheme::Uniform => "uniform".into(),
            },
        );
        kv("aggregation_momentum", self.aggregation_momentum.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("classes", self.classes.to_string());
        kv("dims", self.dims.to_string());
        kv("per_class", self.per_class.to_string());
        kv("separation", self.separation.to_string());
        kv("spread", self.spread.to_string());
        kv("labeled", self.labeled.to_string());
        kv("test_fraction", self.test_fraction.to_string());
        kv(
            "partition",
            match self.partition {
                Partition::Iid => "iid".into(),
                Partition::Dirichlet => "dirichlet".into(),
            },
        );
        kv("alpha", self.alpha.to_string());
        kv("weak_noise", self.weak_noise.to_string());
        kv("strong_noise", self.strong_noise.to_string());
        kv("strong_mask", self.strong_mask.to_string());
        kv("seeds", join_u64s(&self.seeds));
        kv("run_name", self.run_name.clone());
        kv("out_dir", self.out_dir.clone());
        s
    }

    /// Parse the `key = value` form over the defaults. An empty file is the
    /// default configuration. Unknown keys and malformed values are
    /// collected and reported together.
    pub fn parse_kv(text: &str) -> CliResult<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut problems = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                problems.push(format!("line {}: expected `key = value`", lineno + 1));
                continue;
            };
            let key = key.trim();
            let value = value.trim();
            if let Err(e) = cfg.set_key(key, value) {
                problems.push(format!("line {}: {e}", lineno + 1));
            }
        }
        if !problems.is_empty() {
            return Err(CliError::Config(problems.join("\n")));
        }
        Ok(cfg)
    }

    /// Assign one field by key name.
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e| format!("{key}: {e}"))
        }
        fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, String>
        where
            T::Err: std::fmt::Display,
        {
            if value.trim().is_empty() {
                return Ok(Vec::new());
            }
            value
                .split(',')
                .map(|t| t.trim().parse().map_err(|e| format!("{key}: {e}")))
                .collect()
        }
        match key {
            "rounds" => self.rounds = num(key, value)?,
            "clients" => self.clients = num(key, value)?,
            "participation" => self.participation = num(key, value)?,
            "server_mode" => {
                self.server_mode = match value {
                    "epochs" => ServerMode::Epochs,
                    "iterations" => ServerMode::Iterations,
                    other => return Err(format!("server_mode: unknown value {other:?}")),
                }
            }
            "server_epochs" => self.server_epochs = num(key, value)?,
            "server_iter" => self.server_iter = num(key, value)?,
            "server_batch" => self.server_batch = num(key, value)?,
            "train_iter" => self.train_iter = num(key, value)?,
            "warmup_iter" => self.warmup_iter = num(key, value)?,
            "client_batch" => self.client_batch = num(key, value)?,
            "unpseudo_ratio" => self.unpseudo_ratio = num(key, value)?,
            "confidence_threshold" => self.confidence_threshold = num(key, value)?,
            "energy_threshold" => self.energy_threshold = num(key, value)?,
            "temperature" => self.temperature = num(key, value)?,
            "mixup_alpha" => self.mixup_alpha = num(key, value)?,
            "method" => self.method = MethodMode::parse(value).map_err(|e| e.to_string())?,
            "hidden" => self.hidden = list(key, value)?,
            "feature_norm" => self.feature_norm = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "min_lr_factor" => self.min_lr_factor = num(key, value)?,
            "aggregation" => {
                self.aggregation = match value {
                    "data_size" => WeightScheme::DataSize,
                    "uniform" => WeightScheme::Uniform,
                    other => return Err(format!("aggregation: unknown value {other:?}")),
                }
            }
            "aggregation_momentum" => self.aggregation_momentum = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "classes" => self.classes = num(key, value)?,
            "dims" => self.dims = num(key, value)?,
            "per_class" => self.per_class = num(key, value)?,
            "separation" => self.separation = num(key, value)?,
            "spread" => self.spread = num(key, value)?,
            "labeled" => self.labeled = num(key, value)?,
            "test_fraction" => self.test_fraction = num(key, value)?,
            "partition" => {
                self.partition = match value {
                    "iid" => Partition::Iid,
                    "dirichlet" => Partition::Dirichlet,
                    other => return Err(format!("partition: unknown value {other:?}")),
                }
            }
            "alpha" => self.alpha = num(key, value)?,
            "weak_noise" => self.weak_noise = num(key, value)?,
            "strong_noise" => self.strong_noise = num(key, value)?,
            "strong_mask" => self.strong_mask = num(key, value)?,
            "seeds" => self.seeds = list(key, value)?,
            "run_name" => self.run_name = value.to_string(),
            "out_dir" => self.out_dir = value.to_string(),
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Validate every field, reporting all problems at once.
    pub fn validate(&self) -> CliResult<()> {
        let mut problems: Vec<String> = Vec::new();
        let positive = |v: usize, name: &str, problems: &mut Vec<String>| {
            if v == 0 {
                problems.push(format!("{name} must be >= 1"));
            }
        };
        positive(self.clients, "clients", &mut problems);
        positive(self.server_batch, "server_batch", &mut problems);
        positive(self.client_batch, "client_batch", &mut problems);
        positive(self.eval_every, "eval_every", &mut problems);
        positive(self.classes, "classes", &mut problems);
        positive(self.dims, "dims", &mut problems);
        positive(self.per_class, "per_class", &mut problems);
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            problems.push("participation must be in (0, 1]".into());
        } else if (self.clients as f64 * self.participation).floor() < 1.0 {
            problems.push("participation must sample at least one client".into());
        }
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold < 1.0) {
            problems.push("confidence_threshold must be in (0, 1)".into());
        }
        if self.unpseudo_ratio.is_nan() || self.unpseudo_ratio < 0.0 {
            problems.push("unpseudo_ratio must be >= 0".into());
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            problems.push("temperature must be > 0".into());
        }
        if self.mixup_alpha.is_nan() || self.mixup_alpha <= 0.0 {
            problems.push("mixup_alpha must be > 0".into());
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            problems.push("learning_rate must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            problems.push("momentum must be in [0, 1)".into());
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            problems.push("weight_decay must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.aggregation_momentum) {
            problems.push("aggregation_momentum must be in [0, 1]".into());
        }
        if self.energy_threshold.is_nan() {
            problems.push("energy_threshold must not be NaN".into());
        }
        if self.separation.is_nan() || self.separation <= 0.0 {
            problems.push("separation must be > 0".into());
        }
        if self.spread.is_nan() || self.spread < 0.0 {
            problems.push("spread must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            problems.push("test_fraction must be in [0, 1)".into());
        }
        if self.labeled == 0 || self.classes == 0 || !self.labeled.is_multiple_of(self.classes.max(1)) {
            problems.push("labeled must be a positive multiple of classes".into());
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            problems.push("alpha must be > 0".into());
        }
        if self.weak_noise.is_nan() || self.weak_noise < 0.0 {
            problems.push("weak_noise must be >= 0".into());
        }
        if self.strong_noise.is_nan() || self.strong_noise < self.weak_noise {
            problems.push("strong_noise must be >= weak_noise".into());
        }
        if !(0.0..1.0).contains(&self.strong_mask) {
            problems.push("strong_mask must be in [0, 1)".into());
        }
        if self.seeds.is_empty() {
            problems.push("seeds must list at least one seed".into());
        }
        if self.run_name.is_empty() || self.run_name.contains(['/', '\\']) {
            problems.push("run_name must be a non-empty path component".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems.join("; ")))
        }
    }

    pub fn run_config(&self, seed: u64) -> RunConfig {
        RunConfig {
            rounds: self.rounds,
            clients: self.clients,
            participation: self.participation,
            server_passes: match self.server_mode {
                ServerMode::Epochs => ServerPasses::Epochs(self.server_epochs),
                ServerMode::Iterations => ServerPasses::Iterations(self.server_iter),
            },
            server_batch: self.server_batch,
            train_iter: self.train_iter,
            warmup_iter: self.warmup_iter,
            client_batch: self.client_batch,
            unpseudo_ratio: self.unpseudo_ratio,
            confidence_threshold: self.confidence_threshold,
            energy_threshold: self.energy_threshold,
            temperature: self.temperature,
            mixup_alpha: self.mixup_alpha,
            method: self.method,
            hidden: self.hidden.clone(),
            feature_norm: self.feature_norm,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            min_lr_factor: self.min_lr_factor,
            aggregation: self.aggregation,
            aggregation_momentum: self.aggregation_momentum,
            eval_every: self.eval_every,
            seed,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            classes: self.classes,
            dims: self.dims,
            per_class: self.per_class,
            separation: self.separation,
            spread: self.spread,
            labeled: self.labeled,
            test_fraction: self.test_fraction,
            clients: self.clients,
            partition: match self.partition {
                Partition::Iid => PartitionMode::Iid,
                Partition::Dirichlet => PartitionMode::Dirichlet { alpha: self.alpha },
            },
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            weak_noise_std: self.weak_noise,
            strong_noise_std: self.strong_noise,
            strong_mask_fraction: self.strong_mask,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default_config() {
        let cfg = ExperimentConfig::parse_kv("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn kv_roundtrip_is_identity() {
        let cfg = ExperimentConfig {
            unpseudo_ratio: 1.0,
            confidence_threshold: 0.95,
            energy_threshold: -5.0,
            method: MethodMode::CawtUnpseudo,
            partition: Partition::Dirichlet,
            alpha: 0.1,
            hidden: vec![32, 16, 8],
            seeds: vec![7, 8],
            ..ExperimentConfig::default()
        };
        let text = cfg.to_kv();
        let parsed = ExperimentConfig::parse_kv(&text).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn infinite_energy_threshold_roundtrips() {
        let cfg = ExperimentConfig {
            energy_threshold: f64::INFINITY,
            ..ExperimentConfig::default()
        };
        let parsed = ExperimentConfig::parse_kv(&cfg.to_kv()).unwrap();
        assert_eq!(parsed.energy_threshold, f64::INFINITY);
    }

    #[test]
    fn zero_participation_names_the_field() {
        let cfg = ExperimentConfig {
            participation: 0.0,
            ..ExperimentConfig::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("participation"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_all_problems() {
        let err = ExperimentConfig::parse_kv("bogus = 1\nrounds = x\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("bogus"), "{err}");
        assert!(err.contains("rounds"), "{err}");
    }

    #[test]
    fn validation_collects_multiple_problems() {
        let cfg = ExperimentConfig {
            participation: 0.0,
            confidence_threshold: 1.5,
            labeled: 7,
            ..ExperimentConfig::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("participation"));
        assert!(err.contains("confidence_threshold"));
        assert!(err.contains("labeled"));
    }
}
