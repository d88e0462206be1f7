//! `ratchet`: synthesize, prepare, train, evaluate and explain from one binary.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ratchet_core::config::Config;

#[derive(Parser, Debug)]
#[command(name = "ratchet", version, about = "Transformer risk models for ICU time series", arg_required_else_help = true)]
pub struct Cli {
    /// Config file; keys it leaves out keep their defaults.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// `section.key=value`, applied after the config file. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Parent of the per-invocation run directory.
    #[arg(long, default_value = "runs", global = true)]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic cohort with a planted signal.
    Synth(SynthArgs),
    /// Bin, split and normalize a cohort into a tensor cache.
    Prepare(PrepareArgs),
    /// Masked-timeframe pretraining on the training split.
    Pretrain(PretrainArgs),
    /// Supervised fine-tuning, optionally from a checkpoint.
    Finetune(FinetuneArgs),
    /// Repeated-split comparison of model variants.
    Experiment(ExperimentArgs),
    /// Expected-gradients attributions for a trained model.
    Explain(ExplainArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    prevalence: Option<f64>,
    #[arg(long)]
    n_stays: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// `by_year` or `random`.
    #[arg(long)]
    split_mode: Option<String>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    val_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    /// Directory written by `prepare`.
    #[arg(long)]
    prepared: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[arg(long)]
    prepared: PathBuf,
    /// Checkpoint directory to start from, e.g. a pretraining run's `checkpoint`.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    /// Cohort file; without it a synthetic cohort is generated from `[data]`.
    #[arg(long, requires = "schema")]
    cohort: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Comma-separated, e.g. `full,no_gct,logreg`.
    #[arg(long)]
    variants: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    base_seed: Option<u64>,
    /// Extra copy of the text report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    prepared: PathBuf,
    #[arg(long)]
    n_stays: Option<usize>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Prepare(_) => "prepare",
            Command::Pretrain(_) => "pretrain",
            Command::Finetune(_) => "finetune",
            Command::Experiment(_) => "experiment",
            Command::Explain(_) => "explain",
        }
    }

    /// Dedicated flags as overrides; they are applied last.
    fn overrides(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut put = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push(format!("{key}={v}"));
            }
        };
        match self {
            Command::Synth(a) => {
                put("data.prevalence", a.prevalence.map(|v| v.to_string()));
                put("data.n_stays", a.n_stays.map(|v| v.to_string()));
                put("data.seed", a.seed.map(|v| v.to_string()));
            }
            Command::Prepare(a) => {
                put("data.split_mode", a.split_mode.clone());
                put("data.test_fraction", a.test_fraction.map(|v| v.to_string()));
                put("data.val_fraction", a.val_fraction.map(|v| v.to_string()));
            }
            Command::Pretrain(a) => put("pretrain.epochs", a.epochs.map(|v| v.to_string())),
            Command::Finetune(a) => put("finetune.epochs", a.epochs.map(|v| v.to_string())),
            Command::Experiment(a) => {
                put("eval.variants", a.variants.clone());
                put("eval.n_runs", a.runs.map(|v| v.to_string()));
                put("eval.base_seed", a.base_seed.map(|v| v.to_string()));
            }
            Command::Explain(a) => put("explain.n_stays", a.n_stays.map(|v| v.to_string())),
        }
        out
    }
}

/// Defaults, then the config file, then `--set`, then dedicated flags.
fn resolve(cli: &Cli) -> ratchet_core::Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    for o in cli.overrides.iter().chain(&cli.command.overrides()) {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match commands::run(&cli, &cfg) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
