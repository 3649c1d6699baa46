use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use deep_warehouse::harness::{self, ControllerKind, ExperimentConfig, Layout};

#[derive(Parser)]
#[command(name = "dwh", version, about = "Warehouse simulator and model-based RL pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Random-action throughput on one thread; prints a JSON report.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
    },
    /// Runs the noisy expert and writes a JSONL dataset.
    Collect {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out>/dataset.jsonl.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Trains all predictive-model candidates and selects one.
    TrainModel {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Defaults to <out>/model.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Trains the Q-network on model rollouts only.
    TrainPolicy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Defaults to <out>/policy.dwp.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Plays real episodes and writes eval.json.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Defaults to eval.episodes from the config.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, value_enum, default_value_t = ControllerKind::Greedy)]
        controller: ControllerKind,
    },
    /// collect, train-model, train-policy and eval in sequence.
    Pipeline {
        #[command(flatten)]
        common: Common,
    },
}

fn print(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Bench { common, seconds } => {
            let report = harness::cmd_bench(&common.load()?, seconds)?;
            print(&serde_json::to_value(report)?)
        }
        Command::Collect { common, dataset } => {
            let cfg = common.load()?;
            let path = dataset.unwrap_or_else(|| Layout::new(&cfg.out_dir).dataset);
            let data = harness::cmd_collect(&cfg, &path)?;
            print(&json!({
                "dataset": path,
                "records": data.len(),
                "episodes": data.episodes().len(),
            }))
        }
        Command::TrainModel { common, dataset, model } => {
            let cfg = common.load()?;
            let layout = Layout::new(&cfg.out_dir);
            let dir = model.unwrap_or(layout.model_dir);
            let m = harness::cmd_train_model(&cfg, &dataset.unwrap_or(layout.dataset), &dir)?;
            let selected = m.selected()?;
            print(&json!({
                "model": dir,
                "selected": m.candidate(selected).name(),
                "scores": m.registry.scores,
            }))
        }
        Command::TrainPolicy { common, dataset, model, policy } => {
            let cfg = common.load()?;
            let layout = Layout::new(&cfg.out_dir);
            let path = policy.unwrap_or(layout.policy);
            let q = harness::cmd_train_policy(
                &cfg,
                &model.unwrap_or(layout.model_dir),
                &dataset.unwrap_or(layout.dataset),
                &path,
            )?;
            print(&json!({"policy": path, "updates": q.updates()}))
        }
        Command::Eval { common, policy, episodes, controller } => {
            let cfg = common.load()?;
            let layout = Layout::new(&cfg.out_dir);
            let episodes = episodes.unwrap_or(cfg.eval.episodes);
            let report =
                harness::cmd_eval(&cfg, controller, &policy.unwrap_or(layout.policy), episodes)?;
            harness::write_json(&layout.eval, &report)?;
            print(&serde_json::to_value(report)?)
        }
        Command::Pipeline { common } => {
            let report = harness::cmd_pipeline(&common.load()?)?;
            print(&serde_json::to_value(report)?)
        }
    }
}
