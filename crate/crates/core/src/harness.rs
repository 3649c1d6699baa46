//! Experiment configuration and the command implementations behind the
//! `dwh` binary: benchmark, collect, train the model, train the policy on
//! model rollouts, evaluate, and the whole pipeline in one go.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::dvae2::{self, ModelConfig, PredictiveModel};
use crate::expert::ExpertController;
use crate::metrics::{aggregate, MeanStd};
use crate::policy::{self, PolicyTrainConfig, QFunction};
use crate::sim::{
    worlds_constructed_on_thread, DiscreteAction, GridConfig, RandomController, SimRng,
    StepResult, WorldState, N_ACTIONS, OBS_LEN,
};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const MODEL_DIR: &str = "model";
pub const LOSS_CURVE_FILE: &str = "loss_curve.csv";
pub const POLICY_FILE: &str = "policy.dwp";
pub const POLICY_CURVE_FILE: &str = "policy_curve.csv";
pub const EVAL_FILE: &str = "eval.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectConfig {
    pub episodes: usize,
    /// Chance that the expert's action is replaced by a uniform one.
    pub expert_epsilon: f64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            episodes: 20,
            expert_epsilon: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelTrainConfig {
    /// Epochs `N`.
    pub epochs: usize,
    pub batch_size: usize,
    /// Share of episodes held out for validation.
    pub val_fraction: f64,
}

impl Default for ModelTrainConfig {
    fn default() -> Self {
        ModelTrainConfig {
            epochs: 30,
            batch_size: 8,
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 20,
            seed: 1_000_000,
        }
    }
}

/// One experiment, loadable from a single JSON document. Only `grid` is
/// required; every other section has defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub collect: CollectConfig,
    #[serde(default)]
    pub model_training: ModelTrainConfig,
    #[serde(default)]
    pub policy: PolicyTrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Stream indices for seeds derived from the experiment seed.
mod stream {
    pub const SPLIT: u64 = 1;
    pub const MODEL_INIT: u64 = 2;
    pub const MODEL_TRAIN: u64 = 3;
    pub const POLICY_INIT: u64 = 4;
    pub const POLICY_TRAIN: u64 = 5;
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.model.validate()?;
        self.policy.validate()?;
        ensure!(self.collect.episodes >= 1, "collect.episodes must be at least 1");
        ensure!(
            (0.0..=1.0).contains(&self.collect.expert_epsilon),
            "collect.expert_epsilon must lie in [0, 1]"
        );
        ensure!(self.model_training.batch_size >= 1, "model_training.batch_size must be at least 1");
        ensure!(
            self.model_training.val_fraction > 0.0 && self.model_training.val_fraction < 1.0,
            "model_training.val_fraction must lie in (0, 1)"
        );
        ensure!(self.eval.episodes >= 1, "eval.episodes must be at least 1");
        Ok(())
    }

    pub fn derived_seed(&self, stream: u64) -> u64 {
        data::derive_seed(self.seed, stream)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub grid: String,
    pub n_taxis: usize,
    pub taxi_steps_per_sec: f64,
    pub elapsed_s: f64,
    pub steps: u64,
}

/// Steps one world with uniformly random actions for `seconds` of wall
/// time on the calling thread, starting a fresh world whenever the
/// episode ends.
pub fn cmd_bench(cfg: &ExperimentConfig, seconds: f64) -> Result<BenchReport> {
    ensure!(seconds >= 1.0, "bench needs at least 1 second, got {seconds}");
    let grid = &cfg.grid;
    let mut world = WorldState::new(grid.clone())?;
    let n = grid.n_taxis;
    let mut rng = SimRng::new(cfg.seed);
    let mut actions = vec![DiscreteAction::NOOP; n];
    let mut out = StepResult::default();
    let mut steps = 0u64;
    let start = Instant::now();
    let budget = std::time::Duration::from_secs_f64(seconds);
    while start.elapsed() < budget {
        for _ in 0..256 {
            for a in actions.iter_mut() {
                *a = DiscreteAction::from_index(rng.below(N_ACTIONS));
            }
            if world.is_done() {
                world = WorldState::new(grid.clone())?;
            }
            world.step_discrete_into(&actions, &mut out)?;
            steps += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok(BenchReport {
        grid: format!("{}x{}", grid.width, grid.height),
        n_taxis: n,
        taxi_steps_per_sec: (steps * n as u64) as f64 / elapsed,
        elapsed_s: elapsed,
        steps,
    })
}

/// Expert transitions from `collect.episodes` fresh worlds, written as
/// JSON Lines.
pub fn cmd_collect(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset> {
    let eps = cfg.collect.expert_epsilon;
    let dataset = data::collect(
        &cfg.grid,
        "expert",
        |s| ExpertController::new(eps, s),
        cfg.collect.episodes,
        cfg.seed,
    )?;
    ensure_parent(out)?;
    dataset
        .save(out)
        .with_context(|| format!("writing dataset {}", out.display()))?;
    Ok(dataset)
}

/// The train/validation split used by [`cmd_train_model`]. A single
/// episode cannot be split and then serves as both halves.
pub fn split_dataset(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<(Dataset, Dataset)> {
    if dataset.episodes().len() < 2 {
        return Ok((dataset.clone(), dataset.clone()));
    }
    Ok(dataset.split(
        1.0 - cfg.model_training.val_fraction,
        cfg.derived_seed(stream::SPLIT),
    )?)
}

/// Trains every registry candidate for `N` epochs on the training share of
/// the dataset, writes the model directory and `loss_curve.csv` with one
/// row per epoch and candidate.
pub fn cmd_train_model(
    cfg: &ExperimentConfig,
    dataset_path: &Path,
    model_dir: &Path,
) -> Result<PredictiveModel> {
    let dataset = Dataset::load(dataset_path)
        .with_context(|| format!("loading dataset {}", dataset_path.display()))?;
    if dataset.is_empty() {
        bail!(dvae2::ModelError::EmptyDataset);
    }
    let (train, val) = split_dataset(cfg, &dataset)?;
    let mut model = PredictiveModel::new(
        cfg.model.clone(),
        dataset.obs_width().unwrap_or(OBS_LEN),
        cfg.derived_seed(stream::MODEL_INIT),
    )?;
    let curves = dvae2::train_predictive_validated(
        &mut model,
        &train,
        Some(&val),
        cfg.model_training.epochs,
        cfg.model_training.batch_size,
        cfg.derived_seed(stream::MODEL_TRAIN),
        1,
    )?;
    model.save(model_dir)?;
    let mut csv = String::from("epoch,candidate,train_mse,val_mse\n");
    for epoch in 0..cfg.model_training.epochs {
        for (cand, curve) in curves.iter().enumerate() {
            let e = &curve[epoch];
            let val = e.val_mse.expect("validation set supplied");
            csv.push_str(&format!("{},{cand},{:e},{:e}\n", epoch + 1, e.train_mse, val));
        }
    }
    fs::write(model_dir.join(LOSS_CURVE_FILE), csv)?;
    Ok(model)
}

/// Trains a fresh Q-network for `M` epochs purely on model rollouts that
/// start from dataset observations. Fails if a simulator world gets built
/// on this thread while it runs.
pub fn cmd_train_policy(
    cfg: &ExperimentConfig,
    model_dir: &Path,
    dataset_path: &Path,
    policy_path: &Path,
) -> Result<QFunction> {
    let worlds_before = worlds_constructed_on_thread();
    let model = PredictiveModel::load(model_dir)
        .with_context(|| format!("loading model {}", model_dir.display()))?;
    let dataset = Dataset::load(dataset_path)
        .with_context(|| format!("loading dataset {}", dataset_path.display()))?;
    let mut q = QFunction::new(
        model.obs_width,
        &cfg.policy.hidden,
        cfg.policy.gamma,
        cfg.derived_seed(stream::POLICY_INIT),
    )?;
    let curve = if cfg.policy.epochs == 0 {
        Vec::new()
    } else {
        policy::train_on_rollouts(
            &mut q,
            &model,
            &dataset,
            &cfg.policy,
            cfg.derived_seed(stream::POLICY_TRAIN),
        )?
    };
    ensure!(
        worlds_constructed_on_thread() == worlds_before,
        "policy training constructed a simulator world"
    );
    ensure_parent(policy_path)?;
    q.save(policy_path)?;
    let mut csv = String::from("epoch,mean_q_loss\n");
    for (epoch, loss) in curve.iter().enumerate() {
        csv.push_str(&format!("{},{loss:e}\n", epoch + 1));
    }
    fs::write(policy_path.with_file_name(POLICY_CURVE_FILE), csv)?;
    Ok(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// Greedy play with the stored Q-network.
    Greedy,
    /// Uniformly random actions.
    Random,
    /// The handcrafted expert without exploration noise.
    Expert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_score: f64,
    pub std_score: f64,
    pub episodes: usize,
}

/// Plays `episodes` real episodes and summarizes return and score.
/// Returns are summed over taxis; stds are population stds.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    controller: ControllerKind,
    policy_path: &Path,
    episodes: usize,
) -> Result<EvalReport> {
    ensure!(episodes >= 1, "need at least one evaluation episode");
    let (grid, seed) = (&cfg.grid, cfg.eval.seed);
    let eval = match controller {
        ControllerKind::Greedy => {
            let q = QFunction::load(policy_path, cfg.policy.gamma)
                .with_context(|| format!("loading policy {}", policy_path.display()))?;
            ensure!(
                q.obs_width() == OBS_LEN,
                "policy expects observations of width {}, the simulator emits {OBS_LEN}",
                q.obs_width()
            );
            policy::evaluate(&q, grid, episodes, seed)?
        }
        ControllerKind::Random => {
            policy::evaluate_controller(grid, RandomController::new, episodes, seed)?
        }
        ControllerKind::Expert => {
            policy::evaluate_controller(grid, |s| ExpertController::new(0.0, s), episodes, seed)?
        }
    };
    let agg = aggregate(&eval.episodes)?;
    let MeanStd { mean: mean_return, std: std_return } = agg.undiscounted_return;
    let MeanStd { mean: mean_score, std: std_score } = agg.score;
    Ok(EvalReport {
        mean_return,
        std_return,
        mean_score,
        std_score,
        episodes,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

/// Artifact locations inside an output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub dataset: PathBuf,
    pub model_dir: PathBuf,
    pub policy: PathBuf,
    pub eval: PathBuf,
}

impl Layout {
    pub fn new(out_dir: &Path) -> Self {
        Layout {
            dataset: out_dir.join(DATASET_FILE),
            model_dir: out_dir.join(MODEL_DIR),
            policy: out_dir.join(POLICY_FILE),
            eval: out_dir.join(EVAL_FILE),
        }
    }
}

/// Collect, train the model, train the policy, evaluate; artifacts land in
/// `cfg.out_dir` and the first failing stage aborts the run.
pub fn cmd_pipeline(cfg: &ExperimentConfig) -> Result<EvalReport> {
    let layout = Layout::new(&cfg.out_dir);
    cmd_collect(cfg, &layout.dataset).context("collect stage")?;
    cmd_train_model(cfg, &layout.dataset, &layout.model_dir).context("train-model stage")?;
    cmd_train_policy(cfg, &layout.model_dir, &layout.dataset, &layout.policy)
        .context("train-policy stage")?;
    let report = cmd_eval(cfg, ControllerKind::Greedy, &layout.policy, cfg.eval.episodes)
        .context("eval stage")?;
    write_json(&layout.eval, &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "grid": {
                    "width": 3, "height": 3,
                    "pickup_cells": [[0, 0]],
                    "delivery_cells": [[2, 2, true]],
                    "n_taxis": 1, "horizon": 50,
                    "task_spawn_prob": 0.3, "max_open_tasks": 2, "seed": 0
                },
                "model": {"latent_widths": [6, 4], "hidden": 8, "view_width": 16},
                "collect": {"episodes": 3, "expert_epsilon": 0.2},
                "model_training": {"epochs": 2, "batch_size": 16, "val_fraction": 0.34},
                "policy": {"epochs": 2, "rollouts_per_epoch": 10, "updates_per_epoch": 5, "hidden": [16]},
                "eval": {"episodes": 2, "seed": 5},
                "seed": 7
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = tiny();
        assert_eq!(cfg.model.buffer, 4);
        assert_eq!(cfg.out_dir, PathBuf::from("out"));
        let mut bad = cfg.clone();
        bad.eval.episodes = 0;
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.grid.width = 2;
        assert!(bad.validate().is_err());
        assert!(ExperimentConfig::from_json(r#"{"grid": {}, "bogus": 1}"#).is_err());
    }

    #[test]
    fn pipeline_artifacts_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let run = |sub: &str| {
            let mut cfg = tiny();
            cfg.out_dir = dir.path().join(sub);
            let report = cmd_pipeline(&cfg).unwrap();
            (cfg.out_dir.clone(), report)
        };
        let (a, ra) = run("a");
        let (b, rb) = run("b");
        assert_eq!(ra, rb);
        for f in [
            "dataset.jsonl",
            "model/manifest.json",
            "model/loss_curve.csv",
            "policy.dwp",
            "policy_curve.csv",
            "eval.json",
        ] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        }
        let csv = fs::read_to_string(a.join("model/loss_curve.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 2 * 4);
    }

    #[test]
    fn zero_model_epochs_select_first_candidate() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.model_training.epochs = 0;
        let data = dir.path().join("d.jsonl");
        cmd_collect(&cfg, &data).unwrap();
        let model = cmd_train_model(&cfg, &data, &dir.path().join("m")).unwrap();
        assert_eq!(model.selected().unwrap(), 0);
        let csv = fs::read_to_string(dir.path().join("m").join(LOSS_CURVE_FILE)).unwrap();
        assert_eq!(csv.lines().count(), 1);
        // an untrained model cannot drive rollouts
        let err = cmd_train_policy(&cfg, &dir.path().join("m"), &data, &dir.path().join("p.dwp"));
        assert!(err.is_err());
    }

    #[test]
    fn bench_report_counts_taxi_steps() {
        let r = cmd_bench(&tiny(), 1.0).unwrap();
        assert_eq!(r.grid, "3x3");
        assert_eq!(r.n_taxis, 1);
        assert!(r.steps > 0);
        let expected = r.steps as f64 / r.elapsed_s;
        assert!((r.taxi_steps_per_sec - expected).abs() <= 1e-9 * expected);
        assert!(cmd_bench(&tiny(), 0.5).is_err());
    }
}
