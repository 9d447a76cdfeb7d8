//! Command-line harness: training, evaluation against the baselines,
//! baseline-only comparisons and trace replay.

pub mod commands;
pub mod replay;
pub mod report;
pub mod table;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use kis_core::config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "kis", version, about = "GPU-aware autoscaling simulator and PPO agent")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the agent; writes checkpoints, training log and step trace.
    Train(TrainArgs),
    /// Compare a checkpoint's greedy policy with the baselines.
    Evaluate(EvaluateArgs),
    /// Run the fixed and threshold baselines only.
    Baseline(CommonArgs),
    /// Summarize a JSON-lines step trace.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated subset of ramp,periodic,random,spike.
    #[arg(long)]
    pub patterns: Option<String>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub trace: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// File, then `--set` overrides, then the dedicated flags.
pub fn effective_config(args: &CommonArgs, episodes: Option<usize>) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for kv in &args.set {
        cfg.apply_override(kv)?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(p) = &args.patterns {
        cfg.set("patterns", p)?;
    }
    if let Some(e) = episodes {
        cfg.train.episodes = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one subcommand and returns what it prints.
pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Train(a) => {
            let cfg = effective_config(&a.common, a.episodes)?;
            commands::train(&cfg, &a.common.out)
        }
        Command::Evaluate(a) => {
            let cfg = effective_config(&a.common, None)?;
            commands::evaluate(&cfg, &a.checkpoint, &a.common.out).map(|(_, s)| s)
        }
        Command::Baseline(a) => {
            let cfg = effective_config(a, None)?;
            commands::baseline(&cfg, &a.out).map(|(_, s)| s)
        }
        Command::Replay(a) => commands::replay(&a.trace, &a.out),
    }
}

pub fn run_args<I, S>(args: I) -> Result<String>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).context("parsing arguments")?;
    run(&cli)
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}
