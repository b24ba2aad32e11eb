use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use catchfed_cli::config::ExperimentConfig;
use catchfed_cli::error::{CliError, CliResult};
use catchfed_cli::export::{export_plot_data, ExportKind};
use catchfed_cli::runner::{resolve_out_dir, run_all_seeds};
use catchfed_cli::sweep::{run_sweep, SweepAxis};

/// Desk-scale simulator of label-at-server semi-supervised federated
/// learning.
#[derive(Parser)]
#[command(name = "catchfed", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write round logs plus a summary.
    Run(RunArgs),
    /// Run one configuration across an axis of values and tabulate results.
    Sweep(SweepArgs),
    /// Convert round logs into plot-ready CSV files.
    Export(ExportArgs),
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep axis: method, energy_threshold or mu.
    #[arg(long)]
    axis: String,
    /// Comma-separated axis values, e.g. `-4.0,-4.5,-5.0`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    values: Vec<String>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ExportArgs {
    /// Export kind: curves, reliability or confusion.
    #[arg(long)]
    kind: String,
    /// Output directory for the CSV.
    #[arg(long, default_value = "plots")]
    out: PathBuf,
    /// Restrict reliability/confusion exports to these rounds.
    #[arg(long, value_delimiter = ',')]
    rounds: Vec<usize>,
    /// Run directories, seed directories or manifest files.
    inputs: Vec<PathBuf>,
}

/// Every configuration field is overridable from the command line; flags
/// win over the config file, which wins over built-in defaults.
#[derive(Args)]
struct ConfigArgs {
    /// Configuration file in `key = value` form.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    participation: Option<f64>,
    /// epochs | iterations
    #[arg(long)]
    server_mode: Option<String>,
    #[arg(long)]
    server_epochs: Option<usize>,
    #[arg(long)]
    server_iter: Option<usize>,
    #[arg(long)]
    server_batch: Option<usize>,
    #[arg(long)]
    train_iter: Option<usize>,
    #[arg(long)]
    warmup_iter: Option<usize>,
    #[arg(long)]
    client_batch: Option<usize>,
    /// Consistency batch size as a multiple of the pseudo batch size.
    #[arg(long, alias = "mu")]
    unpseudo_ratio: Option<f64>,
    #[arg(long)]
    confidence_threshold: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    energy_threshold: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    mixup_alpha: Option<f64>,
    /// catchfed | cawt_only | unpseudo_only | cawt_unpseudo | hybrid_only |
    /// fixed_baseline
    #[arg(long)]
    method: Option<String>,
    /// Hidden layer widths, comma separated.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    feature_norm: Option<bool>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    min_lr_factor: Option<f64>,
    /// data_size | uniform
    #[arg(long)]
    aggregation: Option<String>,
    #[arg(long)]
    aggregation_momentum: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dims: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long)]
    labeled: Option<usize>,
    #[arg(long)]
    test_fraction: Option<f64>,
    /// iid | dirichlet
    #[arg(long)]
    partition: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    weak_noise: Option<f64>,
    #[arg(long)]
    strong_noise: Option<f64>,
    #[arg(long)]
    strong_mask: Option<f64>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    run_name: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Config(format!("cannot read {}: {e}", path.display()))
                })?;
                ExperimentConfig::parse_kv(&text)?
            }
            None => ExperimentConfig::default(),
        };
        let mut problems = Vec::new();
        let mut set = |key: &str, value: Option<String>, cfg: &mut ExperimentConfig| {
            if let Some(v) = value {
                if let Err(e) = cfg.set_key(key, &v) {
                    problems.push(e);
                }
            }
        };
        set("rounds", self.rounds.map(|v| v.to_string()), &mut cfg);
        set("clients", self.clients.map(|v| v.to_string()), &mut cfg);
        set("participation", self.participation.map(|v| v.to_string()), &mut cfg);
        set("server_mode", self.server_mode.clone(), &mut cfg);
        set("server_epochs", self.server_epochs.map(|v| v.to_string()), &mut cfg);
        set("server_iter", self.server_iter.map(|v| v.to_string()), &mut cfg);
        set("server_batch", self.server_batch.map(|v| v.to_string()), &mut cfg);
        set("train_iter", self.train_iter.map(|v| v.to_string()), &mut cfg);
        set("warmup_iter", self.warmup_iter.map(|v| v.to_string()), &mut cfg);
        set("client_batch", self.client_batch.map(|v| v.to_string()), &mut cfg);
        set("unpseudo_ratio", self.unpseudo_ratio.map(|v| v.to_string()), &mut cfg);
        set(
            "confidence_threshold",
            self.confidence_threshold.map(|v| v.to_string()),
            &mut cfg,
        );
        set(
            "energy_threshold",
            self.energy_threshold.map(|v| v.to_string()),
            &mut cfg,
        );
        set("temperature", self.temperature.map(|v| v.to_string()), &mut cfg);
        set("mixup_alpha", self.mixup_alpha.map(|v| v.to_string()), &mut cfg);
        set("method", self.method.clone(), &mut cfg);
        set("hidden", self.hidden.clone(), &mut cfg);
        set("feature_norm", self.feature_norm.map(|v| v.to_string()), &mut cfg);
        set("learning_rate", self.learning_rate.map(|v| v.to_string()), &mut cfg);
        set("momentum", self.momentum.map(|v| v.to_string()), &mut cfg);
        set("weight_decay", self.weight_decay.map(|v| v.to_string()), &mut cfg);
        set("min_lr_factor", self.min_lr_factor.map(|v| v.to_string()), &mut cfg);
        set("aggregation", self.aggregation.clone(), &mut cfg);
        set(
            "aggregation_momentum",
            self.aggregation_momentum.map(|v| v.to_string()),
            &mut cfg,
        );
        set("eval_every", self.eval_every.map(|v| v.to_string()), &mut cfg);
        set("classes", self.classes.map(|v| v.to_string()), &mut cfg);
        set("dims", self.dims.map(|v| v.to_string()), &mut cfg);
        set("per_class", self.per_class.map(|v| v.to_string()), &mut cfg);
        set("separation", self.separation.map(|v| v.to_string()), &mut cfg);
        set("spread", self.spread.map(|v| v.to_string()), &mut cfg);
        set("labeled", self.labeled.map(|v| v.to_string()), &mut cfg);
        set("test_fraction", self.test_fraction.map(|v| v.to_string()), &mut cfg);
        set("partition", self.partition.clone(), &mut cfg);
        set("alpha", self.alpha.map(|v| v.to_string()), &mut cfg);
        set("weak_noise", self.weak_noise.map(|v| v.to_string()), &mut cfg);
        set("strong_noise", self.strong_noise.map(|v| v.to_string()), &mut cfg);
        set("strong_mask", self.strong_mask.map(|v| v.to_string()), &mut cfg);
        set("seeds", self.seeds.clone(), &mut cfg);
        set("run_name", self.run_name.clone(), &mut cfg);
        set("out_dir", self.out_dir.clone(), &mut cfg);
        if !problems.is_empty() {
            return Err(CliError::Config(problems.join("; ")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.config.resolve()?;
            let run_dir = resolve_out_dir(&cfg);
            println!("running {} seed(s) into {}", cfg.seeds.len(), run_dir.display());
            let manifests = run_all_seeds(&cfg, &run_dir)?;
            for m in &manifests {
                println!(
                    "seed {}: best accuracy {:.4} (round {}), final {:.4}, final pl {:.4}",
                    m.seed,
                    m.summary.best_accuracy,
                    m.summary.best_round,
                    m.summary.final_accuracy,
                    m.summary.final_pl_accuracy,
                );
            }
            let mean: f64 = manifests.iter().map(|m| m.summary.best_accuracy).sum::<f64>()
                / manifests.len() as f64;
            println!("mean best accuracy {mean:.4}");
            Ok(())
        }
        Command::Sweep(args) => {
            let cfg = args.config.resolve()?;
            let axis = SweepAxis::parse(&args.axis)?;
            if args.values.is_empty() {
                return Err(CliError::Config("sweep needs --values".into()));
            }
            let sweep_dir = resolve_out_dir(&cfg).join(format!("sweep_{}", axis.name()));
            println!(
                "sweeping {} over {:?} into {}",
                axis.name(),
                args.values,
                sweep_dir.display()
            );
            let outcomes = run_sweep(&cfg, axis, &args.values, &sweep_dir)?;
            for o in &outcomes {
                match &o.error {
                    Some(e) => println!("{} = {}: FAILED ({e})", axis.name(), o.value),
                    None => {
                        let mean: f64 =
                            o.manifests.iter().map(|m| m.summary.best_accuracy).sum::<f64>()
                                / o.manifests.len() as f64;
                        println!("{} = {}: mean best accuracy {mean:.4}", axis.name(), o.value);
                    }
                }
            }
            println!("comparison table: {}", sweep_dir.join("comparison.csv").display());
            Ok(())
        }
        Command::Export(args) => {
            let kind = ExportKind::parse(&args.kind)?;
            if args.inputs.is_empty() {
                return Err(CliError::Config("export needs at least one input path".into()));
            }
            let path = export_plot_data(&args.inputs, kind, &args.out, &args.rounds)?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
