//! ε-greedy Q-learning with a dense Q-network, trained either on synthetic
//! model rollouts or directly on stored real transitions.
//!
//! One network is shared by every taxi; each taxi feeds it its own
//! observation.

use std::collections::VecDeque;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approx::{adam_step, mse, Activation, AdamState, ApproxError, DenseNet};
use crate::data::{self, DataError, Dataset, TransitionRecord};
use crate::dvae2::{self, ModelError, PredictiveModel};
use crate::metrics::{mean_std, EpisodeStats, MeanStd};
use crate::sim::{Controller, DiscreteAction, GridConfig, WorldState, N_ACTIONS};

/// Updates between hard copies of the online net into the target net.
pub const TARGET_PERIOD: u64 = 250;
pub const DEFAULT_GAMMA: f64 = 0.99;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("discount {0} outside (0, 1)")]
    BadGamma(f64),
    #[error("Q-network must output {N_ACTIONS} values, got {0}")]
    BadOutputWidth(usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, PolicyError>;

#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    net: DenseNet,
    target: DenseNet,
    gamma: f64,
    adam: AdamState,
    updates: u64,
}

impl QFunction {
    /// `obs → hidden… → 11` with ReLU hidden layers and linear outputs.
    pub fn new(obs_width: usize, hidden: &[usize], gamma: f64, seed: u64) -> Result<Self> {
        let mut sizes = vec![obs_width];
        sizes.extend_from_slice(hidden);
        sizes.push(N_ACTIONS);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(Activation::Identity);
        Self::from_net(DenseNet::init(&sizes, &acts, seed)?, gamma)
    }

    pub fn from_net(net: DenseNet, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(PolicyError::BadGamma(gamma));
        }
        if net.output_width() != N_ACTIONS {
            return Err(PolicyError::BadOutputWidth(net.output_width()));
        }
        Ok(QFunction {
            target: net.clone(),
            adam: AdamState::for_net(&net),
            net,
            gamma,
            updates: 0,
        })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    /// Mutable access to the online net; the target net is left alone.
    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    pub fn target_net(&self) -> &DenseNet {
        &self.target
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn obs_width(&self) -> usize {
        self.net.input_width()
    }

    pub fn q_values(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(self.net.forward(s)?)
    }

    pub fn greedy(&self, s: &[f64]) -> Result<DiscreteAction> {
        Ok(DiscreteAction::from_index(argmax(&self.q_values(s)?)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.net.to_bytes()).map_err(ApproxError::from)?;
        Ok(())
    }

    pub fn load(path: &Path, gamma: f64) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(ApproxError::from)?;
        Self::from_net(DenseNet::from_bytes(&bytes)?, gamma)
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// With probability `epsilon` a uniform action, else the greedy one.
pub fn act<R: Rng>(q: &QFunction, s: &[f64], epsilon: f64, rng: &mut R) -> Result<DiscreteAction> {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(DiscreteAction::from_index(rng.gen_range(0..N_ACTIONS)));
    }
    q.greedy(s)
}

/// One Q-learning step on `batch`: `y = r + γ·max Q_target(s')`, or `y = r`
/// on `done`, squared error on the taken actions only. Returns the loss.
pub fn q_update(q: &mut QFunction, batch: &[TransitionRecord]) -> Result<f64> {
    if batch.is_empty() {
        return Err(PolicyError::EmptyBatch);
    }
    let mut preds = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    let mut traces = Vec::with_capacity(batch.len());
    for rec in batch {
        let trace = q.net.forward_trace(&rec.obs)?;
        preds.push(trace.output()[rec.action as usize]);
        let y = if rec.done {
            rec.reward
        } else {
            let next = q.target.forward(&rec.next_obs)?;
            rec.reward + q.gamma * next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        targets.push(y);
        traces.push(trace);
    }
    let (loss, dpred) = mse(&preds, &targets)?;
    let mut grads = q.net.zero_grad();
    let mut upstream = vec![0.0; N_ACTIONS];
    for ((rec, trace), d) in batch.iter().zip(&traces).zip(&dpred) {
        upstream.fill(0.0);
        upstream[rec.action as usize] = *d;
        q.net.backward_into(trace, &upstream, &mut grads)?;
    }
    adam_step(&mut q.net, &grads, &mut q.adam)?;
    q.updates += 1;
    if q.updates.is_multiple_of(TARGET_PERIOD) {
        q.target = q.net.clone();
    }
    Ok(loss)
}

/// Linear decay from `start` to `end` over `decay_steps`, then flat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1.0,
            end: 0.05,
            decay_steps: 10_000,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// Greedy shared-network controller for real worlds.
pub struct GreedyController<'a> {
    q: &'a QFunction,
}

impl<'a> GreedyController<'a> {
    pub fn new(q: &'a QFunction) -> Self {
        GreedyController { q }
    }
}

impl Controller for GreedyController<'_> {
    fn act(&mut self, world: &WorldState) -> Vec<DiscreteAction> {
        world
            .observe_all()
            .iter()
            .map(|o| self.q.greedy(o.as_slice()).expect("observation width matches the Q-network"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub episodes: Vec<EpisodeStats>,
    pub mean_return: f64,
    pub mean_score: f64,
}

impl Evaluation {
    pub fn from_stats(episodes: Vec<EpisodeStats>) -> Result<Self> {
        let ret: Vec<f64> = episodes.iter().map(|s| s.undiscounted_return).collect();
        let score: Vec<f64> = episodes.iter().map(|s| s.score as f64).collect();
        let MeanStd { mean: mean_return, .. } = mean_std(&ret).map_err(|_| DataError::NoEpisodes)?;
        let MeanStd { mean: mean_score, .. } = mean_std(&score).map_err(|_| DataError::NoEpisodes)?;
        Ok(Evaluation {
            episodes,
            mean_return,
            mean_score,
        })
    }
}

/// Greedy play in fresh real worlds. Episode `i` uses the same world seed
/// as episode `i` of [`data::collect`] with the same base seed, so different
/// controllers can be compared world for world.
pub fn evaluate(q: &QFunction, config: &GridConfig, episodes: usize, seed: u64) -> Result<Evaluation> {
    evaluate_controller(config, |_| GreedyController::new(q), episodes, seed)
}

/// [`evaluate`] for an arbitrary controller factory.
pub fn evaluate_controller<F, C>(
    config: &GridConfig,
    make_controller: F,
    episodes: usize,
    seed: u64,
) -> Result<Evaluation>
where
    F: Fn(u64) -> C + Sync,
    C: Controller,
{
    let outcomes = data::run_episodes(config, make_controller, episodes, seed, false)?;
    Evaluation::from_stats(outcomes.into_iter().map(|o| o.stats).collect())
}

/// Policy-learning schedule shared by the rollout and offline learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyTrainConfig {
    /// Epochs `M`.
    pub epochs: usize,
    /// Fresh synthetic rollouts per epoch.
    pub rollouts_per_epoch: usize,
    /// Q-updates per epoch, each on one sampled minibatch.
    pub updates_per_epoch: usize,
    pub batch_size: usize,
    /// Synthetic transitions kept for replay across epochs; oldest go first.
    pub replay_capacity: usize,
    /// Treat the last step of a rollout as a cut, not a terminal state,
    /// and bootstrap its target from the target net.
    pub bootstrap_rollout_end: bool,
    pub epsilon: EpsilonSchedule,
    pub gamma: f64,
    pub hidden: Vec<usize>,
}

impl Default for PolicyTrainConfig {
    fn default() -> Self {
        PolicyTrainConfig {
            epochs: 50,
            rollouts_per_epoch: 200,
            updates_per_epoch: 200,
            batch_size: 32,
            replay_capacity: 100_000,
            bootstrap_rollout_end: true,
            epsilon: EpsilonSchedule::default(),
            gamma: DEFAULT_GAMMA,
            hidden: vec![64, 64],
        }
    }
}

impl PolicyTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PolicyError::InvalidConfig(m.into()));
        if self.rollouts_per_epoch == 0
            || self.updates_per_epoch == 0
            || self.batch_size == 0
            || self.replay_capacity == 0
        {
            return bad("rollouts, updates, batch size and replay capacity must be at least 1");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(PolicyError::BadGamma(self.gamma));
        }
        Ok(())
    }
}

fn sampled_updates<'a>(
    q: &mut QFunction,
    n_records: usize,
    record: impl Fn(usize) -> &'a TransitionRecord,
    config: &PolicyTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut total = 0.0;
    let mut batch = Vec::with_capacity(config.batch_size);
    for _ in 0..config.updates_per_epoch {
        batch.clear();
        batch.extend((0..config.batch_size).map(|_| record(rng.gen_range(0..n_records)).clone()));
        total += q_update(q, &batch)?;
    }
    Ok(total / config.updates_per_epoch as f64)
}

/// Model-based learning: each epoch draws fresh `k`-step rollouts from
/// the predictive model, acting ε-greedily with the current Q-network,
/// adds them to a synthetic replay buffer, and applies Q-updates on
/// minibatches from that buffer. No real world is constructed. Returns the
/// mean Q-loss per epoch.
pub fn train_on_rollouts(
    q: &mut QFunction,
    model: &PredictiveModel,
    start_states: &Dataset,
    config: &PolicyTrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    config.validate()?;
    let k = model.config.rollout_k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut replay: VecDeque<TransitionRecord> = VecDeque::new();
    let mut steps = 0u64;
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut act_rng = ChaCha8Rng::seed_from_u64(data::derive_seed(seed, epoch as u64));
        let frozen = q.clone();
        let mut policy = |s: &[f64]| {
            let eps = config.epsilon.value(steps);
            steps += 1;
            act(&frozen, s, eps, &mut act_rng).expect("rollout observations match the Q-network")
        };
        let records = dvae2::rollout(
            model,
            start_states,
            &mut policy,
            config.rollouts_per_epoch,
            k,
            rng.gen(),
        )?;
        for mut rec in records {
            if config.bootstrap_rollout_end {
                rec.done = false;
            }
            if replay.len() == config.replay_capacity {
                replay.pop_front();
            }
            replay.push_back(rec);
        }
        curve.push(sampled_updates(q, replay.len(), |i| &replay[i], config, &mut rng)?);
    }
    Ok(curve)
}

/// Model-free baseline: the same number of Q-updates as
/// [`train_on_rollouts`], on minibatches drawn from stored real
/// transitions.
pub fn train_offline(
    q: &mut QFunction,
    dataset: &Dataset,
    config: &PolicyTrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(PolicyError::Data(DataError::DatasetTooShort { needed: 1 }));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = dataset.records();
    (0..config.epochs)
        .map(|_| sampled_updates(q, records.len(), |i| &records[i], config, &mut rng))
        .collect()
}
