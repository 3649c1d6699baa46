//! The learned predictive model: view encoders, temporal reasoners,
//! decoders with next-state, reward and value heads, score-based technique
//! selection, and k-step synthetic rollouts.
//!
//! A candidate pairs one view technique (encoder + decoder) with one reason
//! technique. All candidates train on the same windows; each accumulates
//! its batch prediction errors as a score and the lowest score wins.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approx::{adam_step, Activation, AdamState, ApproxError, DenseNet, GradBuffer, Trace};
use crate::data::{Dataset, TransitionRecord};
use crate::sim::{DiscreteAction, ACTIVE_TASK_PENALTY, COMPLETION_REWARD, N_ACTIONS};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("inconsistent shapes: {0}")]
    InconsistentShapes(String),
    #[error("registry has no candidates")]
    EmptyRegistry,
    #[error("model has not been trained")]
    UntrainedModel,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad manifest: {0}")]
    BadManifest(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Latent code `z` produced by a view encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedState(pub Vec<f64>);

/// Hidden state `h` produced by a reasoner.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState(pub Vec<f64>);

impl HiddenState {
    pub fn zeros(width: usize) -> Self {
        HiddenState(vec![0.0; width])
    }
}

/// The last `n` latent codes, oldest first, zero-padded until full.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBuffer {
    slots: Vec<Vec<f64>>,
    latent: usize,
}

impl SequenceBuffer {
    pub fn new(n: usize, latent: usize) -> Self {
        SequenceBuffer {
            slots: vec![vec![0.0; latent]; n],
            latent,
        }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn latent(&self) -> usize {
        self.latent
    }

    pub fn push(&mut self, z: &EncodedState) -> Result<()> {
        check_width(self.latent, z.0.len())?;
        self.slots.rotate_left(1);
        self.slots.last_mut().expect("capacity >= 1").copy_from_slice(&z.0);
        Ok(())
    }

    pub fn newest(&self) -> &[f64] {
        self.slots.last().expect("capacity >= 1")
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slots.concat()
    }
}

fn check_width(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(ModelError::ShapeMismatch { expected, got });
    }
    Ok(())
}

fn with_one_hot(obs: &[f64], action: DiscreteAction) -> Vec<f64> {
    let mut x = Vec::with_capacity(obs.len() + N_ACTIONS);
    x.extend_from_slice(obs);
    x.extend((0..N_ACTIONS).map(|i| if i == action.index() { 1.0 } else { 0.0 }));
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewTechnique {
    pub name: String,
    /// `obs ⊕ one-hot(a)` → `z`.
    pub encoder: DenseNet,
    /// `h ⊕ z` → `ŝ' ⊕ r̂ ⊕ V̂`.
    pub decoder: DenseNet,
}

impl ViewTechnique {
    pub fn new(
        name: impl Into<String>,
        obs_width: usize,
        latent: usize,
        hidden: usize,
        width: usize,
        seed: u64,
    ) -> Result<Self> {
        Ok(ViewTechnique {
            name: name.into(),
            encoder: DenseNet::init(
                &[obs_width + N_ACTIONS, width, latent],
                &[Activation::Tanh, Activation::Tanh],
                seed,
            )?,
            decoder: DenseNet::init(
                &[hidden + latent, width, obs_width + 2],
                &[Activation::Tanh, Activation::Identity],
                seed ^ 0x5bd1_e995,
            )?,
        })
    }

    pub fn obs_width(&self) -> usize {
        self.encoder.input_width() - N_ACTIONS
    }

    pub fn latent(&self) -> usize {
        self.encoder.output_width()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonVariant {
    /// Dense net over the concatenated buffer; ignores `h_prev`.
    WindowDense,
    /// `h = tanh(W·[z; h_prev] + b)` on the newest code.
    SimpleRecurrent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReasonTechnique {
    pub name: String,
    pub variant: ReasonVariant,
    pub net: DenseNet,
}

impl ReasonTechnique {
    pub fn new(
        variant: ReasonVariant,
        n: usize,
        latent: usize,
        hidden: usize,
        seed: u64,
    ) -> Result<Self> {
        let (name, net) = match variant {
            ReasonVariant::WindowDense => (
                "window-dense",
                DenseNet::init(
                    &[n * latent, hidden, hidden],
                    &[Activation::Tanh, Activation::Tanh],
                    seed,
                )?,
            ),
            ReasonVariant::SimpleRecurrent => (
                "simple-recurrent",
                DenseNet::init(&[latent + hidden, hidden], &[Activation::Tanh], seed)?,
            ),
        };
        Ok(ReasonTechnique {
            name: name.into(),
            variant,
            net,
        })
    }

    pub fn hidden(&self) -> usize {
        self.net.output_width()
    }

    fn input(&self, buf: &SequenceBuffer, h_prev: &HiddenState) -> Result<Vec<f64>> {
        match self.variant {
            ReasonVariant::WindowDense => {
                check_width(self.net.input_width(), buf.capacity() * buf.latent())?;
                Ok(buf.flatten())
            }
            ReasonVariant::SimpleRecurrent => {
                check_width(self.net.input_width(), buf.latent() + h_prev.0.len())?;
                let mut x = buf.newest().to_vec();
                x.extend_from_slice(&h_prev.0);
                Ok(x)
            }
        }
    }
}

pub fn encode(view: &ViewTechnique, s: &[f64], a: DiscreteAction) -> Result<EncodedState> {
    check_width(view.obs_width(), s.len())?;
    Ok(EncodedState(view.encoder.forward(&with_one_hot(s, a))?))
}

pub fn reason(tr: &ReasonTechnique, buf: &SequenceBuffer, h_prev: &HiddenState) -> Result<HiddenState> {
    Ok(HiddenState(tr.net.forward(&tr.input(buf, h_prev)?)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub next_obs: Vec<f64>,
    pub reward: f64,
    pub value: f64,
    pub h: HiddenState,
    pub z: EncodedState,
    /// Buffer after pushing `z`.
    pub buffer: SequenceBuffer,
}

/// One model step: encode, push, reason, decode. Inputs are not modified.
pub fn predict(
    view: &ViewTechnique,
    tr: &ReasonTechnique,
    s: &[f64],
    a: DiscreteAction,
    buf: &SequenceBuffer,
    h_prev: &HiddenState,
) -> Result<Prediction> {
    let z = encode(view, s, a)?;
    let mut buffer = buf.clone();
    buffer.push(&z)?;
    let h = reason(tr, &buffer, h_prev)?;
    let mut dec_in = h.0.clone();
    dec_in.extend_from_slice(&z.0);
    let mut out = view.decoder.forward(&dec_in)?;
    let value = out.pop().expect("decoder width >= 2");
    let reward = out.pop().expect("decoder width >= 2");
    Ok(Prediction {
        next_obs: out,
        reward,
        value,
        h,
        z,
        buffer,
    })
}

/// Widths and defaults of a predictive model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Latent widths, one view technique each.
    pub latent_widths: Vec<usize>,
    pub hidden: usize,
    pub buffer: usize,
    pub rollout_k: usize,
    /// Hidden layer width of encoders and decoders.
    pub view_width: usize,
    /// Weight of the value-head error in the training loss.
    pub value_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_widths: vec![16, 8],
            hidden: 32,
            buffer: 4,
            rollout_k: 5,
            view_width: 64,
            value_weight: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.into()));
        if self.latent_widths.is_empty() || self.latent_widths.contains(&0) {
            return bad("latent widths must be non-empty and positive");
        }
        if self.hidden == 0 || self.view_width == 0 {
            return bad("hidden and view widths must be positive");
        }
        if self.buffer == 0 {
            return bad("buffer length n must be at least 1");
        }
        if self.rollout_k == 0 {
            return bad("rollout depth k must be at least 1");
        }
        if !(self.value_weight >= 0.0 && self.value_weight.is_finite()) {
            return bad("value weight must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub view: ViewTechnique,
    pub reason: ReasonTechnique,
}

impl Candidate {
    pub fn name(&self) -> String {
        format!("{}+{}", self.view.name, self.reason.name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TechniqueRegistry {
    pub candidates: Vec<Candidate>,
    pub scores: Vec<f64>,
}

impl TechniqueRegistry {
    pub fn new(candidates: Vec<Candidate>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(ModelError::EmptyRegistry);
        }
        let scores = vec![0.0; candidates.len()];
        Ok(TechniqueRegistry { candidates, scores })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Index of the lowest score, lowest index on ties.
pub fn select_technique(registry: &TechniqueRegistry) -> Result<usize> {
    registry
        .scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .ok_or(ModelError::EmptyRegistry)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveModel {
    pub config: ModelConfig,
    pub obs_width: usize,
    pub registry: TechniqueRegistry,
    /// Epochs of training applied so far.
    pub epochs_trained: usize,
}

impl PredictiveModel {
    /// Every latent width paired with both reason variants.
    pub fn new(config: ModelConfig, obs_width: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if obs_width == 0 {
            return Err(ModelError::InvalidConfig("observation width is zero".into()));
        }
        let mut candidates = Vec::new();
        for (vi, &latent) in config.latent_widths.iter().enumerate() {
            for variant in [ReasonVariant::WindowDense, ReasonVariant::SimpleRecurrent] {
                let s = seed.wrapping_add(0x1000 * candidates.len() as u64);
                candidates.push(Candidate {
                    view: ViewTechnique::new(
                        format!("view{vi}-l{latent}"),
                        obs_width,
                        latent,
                        config.hidden,
                        config.view_width,
                        s,
                    )?,
                    reason: ReasonTechnique::new(variant, config.buffer, latent, config.hidden, s + 1)?,
                });
            }
        }
        Ok(PredictiveModel {
            config,
            obs_width,
            registry: TechniqueRegistry::new(candidates)?,
            epochs_trained: 0,
        })
    }

    /// A model around explicit candidates, e.g. hand-built ones.
    pub fn from_candidates(config: ModelConfig, candidates: Vec<Candidate>) -> Result<Self> {
        config.validate()?;
        let registry = TechniqueRegistry::new(candidates)?;
        let obs_width = registry.candidates[0].view.obs_width();
        for c in &registry.candidates {
            check_width(obs_width, c.view.obs_width())?;
            check_width(obs_width + 2, c.view.decoder.output_width())?;
            check_width(c.reason.hidden() + c.view.latent(), c.view.decoder.input_width())?;
            let reason_in = match c.reason.variant {
                ReasonVariant::WindowDense => config.buffer * c.view.latent(),
                ReasonVariant::SimpleRecurrent => c.view.latent() + c.reason.hidden(),
            };
            check_width(reason_in, c.reason.net.input_width())?;
        }
        Ok(PredictiveModel {
            config,
            obs_width,
            registry,
            epochs_trained: 0,
        })
    }

    pub fn selected(&self) -> Result<usize> {
        select_technique(&self.registry)
    }

    pub fn candidate(&self, idx: usize) -> &Candidate {
        &self.registry.candidates[idx]
    }

    pub fn fresh_state(&self, idx: usize) -> (SequenceBuffer, HiddenState) {
        let c = self.candidate(idx);
        (
            SequenceBuffer::new(self.config.buffer, c.view.latent()),
            HiddenState::zeros(c.reason.hidden()),
        )
    }
}

/// Mean training prediction MSE per epoch, for one candidate.
pub type LossHistory = Vec<f64>;

/// Per-epoch mean prediction errors of one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// Mean over the epoch's batches, measured before each update.
    pub train_mse: f64,
    /// [`prediction_mse`] on the held-out set after the epoch, if any.
    pub val_mse: Option<f64>,
}

fn check_dataset(model: &PredictiveModel, data: &Dataset) -> Result<()> {
    let width = data.obs_width().ok_or(ModelError::EmptyDataset)?;
    if width != model.obs_width {
        return Err(ModelError::InconsistentShapes(format!(
            "dataset observations have width {width}, model expects {}",
            model.obs_width
        )));
    }
    Ok(())
}

struct StepTrace {
    enc: Trace,
    reason: Trace,
    dec: Trace,
}

struct Grads {
    enc: GradBuffer,
    reason: GradBuffer,
    dec: GradBuffer,
}

/// Forward pass over consecutive records from a zero context. Returns the
/// traces and the per-record prediction error on `ŝ' ⊕ r̂`.
fn run_sequence(
    c: &Candidate,
    n: usize,
    records: &[TransitionRecord],
) -> Result<(Vec<StepTrace>, Vec<f64>)> {
    let latent = c.view.latent();
    let hidden = c.reason.hidden();
    let mut zs: Vec<Vec<f64>> = Vec::with_capacity(records.len());
    let mut h_prev = vec![0.0; hidden];
    let mut traces = Vec::with_capacity(records.len());
    let mut errors = Vec::with_capacity(records.len());
    for (j, rec) in records.iter().enumerate() {
        let enc = c.view.encoder.forward_trace(&with_one_hot(&rec.obs, DiscreteAction::from_index(rec.action as usize)))?;
        zs.push(enc.output().to_vec());
        let reason_in = match c.reason.variant {
            ReasonVariant::WindowDense => {
                let mut x = Vec::with_capacity(n * latent);
                for slot in 0..n {
                    // slot n-1 is the newest code, i.e. step j
                    match (j + slot + 1).checked_sub(n) {
                        Some(step) => x.extend_from_slice(&zs[step]),
                        None => x.extend(std::iter::repeat_n(0.0, latent)),
                    }
                }
                x
            }
            ReasonVariant::SimpleRecurrent => {
                let mut x = zs[j].clone();
                x.extend_from_slice(&h_prev);
                x
            }
        };
        let reason = c.reason.net.forward_trace(&reason_in)?;
        let mut dec_in = reason.output().to_vec();
        dec_in.extend_from_slice(&zs[j]);
        let dec = c.view.decoder.forward_trace(&dec_in)?;
        let out = dec.output();
        let w = rec.obs.len();
        let mut sq = 0.0;
        for (p, t) in out[..w].iter().zip(&rec.next_obs) {
            sq += (p - t).powi(2);
        }
        sq += (out[w] - rec.reward).powi(2);
        errors.push(sq / (w + 1) as f64);
        h_prev = reason.output().to_vec();
        traces.push(StepTrace { enc, reason, dec });
    }
    Ok((traces, errors))
}

/// Backpropagates the loss of one window through time, accumulating into
/// `grads`. `scale` multiplies every per-record loss.
fn backprop_sequence(
    c: &Candidate,
    n: usize,
    value_weight: f64,
    records: &[TransitionRecord],
    traces: &[StepTrace],
    scale: f64,
    grads: &mut Grads,
) -> Result<()> {
    let latent = c.view.latent();
    let hidden = c.reason.hidden();
    let len = records.len();
    let mut dz = vec![vec![0.0; latent]; len];
    let mut dh_carry = vec![0.0; hidden];
    for j in (0..len).rev() {
        let rec = &records[j];
        let out = traces[j].dec.output();
        let w = rec.obs.len();
        let k = 2.0 * scale / (w + 1) as f64;
        let mut up = Vec::with_capacity(w + 2);
        up.extend(out[..w].iter().zip(&rec.next_obs).map(|(p, t)| k * (p - t)));
        up.push(k * (out[w] - rec.reward));
        let value_up = match rec.return_to_go {
            Some(g) => 2.0 * scale * value_weight * (out[w + 1] - g),
            None => 0.0,
        };
        up.push(value_up);
        let d_dec_in = c.view.decoder.backward_into(&traces[j].dec, &up, &mut grads.dec)?;
        let mut dh: Vec<f64> = d_dec_in[..hidden].to_vec();
        for (a, b) in dz[j].iter_mut().zip(&d_dec_in[hidden..]) {
            *a += b;
        }
        if c.reason.variant == ReasonVariant::SimpleRecurrent {
            for (a, b) in dh.iter_mut().zip(&dh_carry) {
                *a += b;
            }
        }
        let d_reason_in = c.reason.net.backward_into(&traces[j].reason, &dh, &mut grads.reason)?;
        match c.reason.variant {
            ReasonVariant::WindowDense => {
                for slot in 0..n {
                    if let Some(step) = (j + slot + 1).checked_sub(n) {
                        let g = &d_reason_in[slot * latent..(slot + 1) * latent];
                        for (a, b) in dz[step].iter_mut().zip(g) {
                            *a += b;
                        }
                    }
                }
            }
            ReasonVariant::SimpleRecurrent => {
                for (a, b) in dz[j].iter_mut().zip(&d_reason_in[..latent]) {
                    *a += b;
                }
                dh_carry = d_reason_in[latent..].to_vec();
            }
        }
        // every later step has been processed, so dz[j] is complete
        c.view.encoder.backward_into(&traces[j].enc, &dz[j], &mut grads.enc)?;
    }
    Ok(())
}

struct Optimizers {
    enc: AdamState,
    reason: AdamState,
    dec: AdamState,
}

/// Trains one candidate for `epochs`; returns per-epoch losses and the
/// accumulated score increment.
fn train_candidate(
    c: &mut Candidate,
    config: &ModelConfig,
    data: &Dataset,
    val: Option<&Dataset>,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<(Vec<EpochLoss>, f64)> {
    let n = config.buffer;
    let window = n + 1;
    let starts = data.window_starts(window);
    if starts.is_empty() {
        return Err(ModelError::InconsistentShapes(format!(
            "no episode has the {window} steps needed for one training window"
        )));
    }
    let mut opt = Optimizers {
        enc: AdamState::for_net(&c.view.encoder),
        reason: AdamState::for_net(&c.reason.net),
        dec: AdamState::for_net(&c.view.decoder),
    };
    let mut grads = Grads {
        enc: c.view.encoder.zero_grad(),
        reason: c.reason.net.zero_grad(),
        dec: c.view.decoder.zero_grad(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history = Vec::with_capacity(epochs);
    let mut score = 0.0;
    let mut order = starts;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut epoch_err = 0.0;
        let mut epoch_batches = 0usize;
        for batch in order.chunks(batch_size.max(1)) {
            grads.enc.fill_zero();
            grads.reason.fill_zero();
            grads.dec.fill_zero();
            let scale = 1.0 / (batch.len() * window) as f64;
            let mut batch_err = 0.0;
            for &start in batch {
                let recs = data.window(start, window);
                let (traces, errors) = run_sequence(c, n, recs)?;
                batch_err += errors.iter().sum::<f64>();
                backprop_sequence(c, n, config.value_weight, recs, &traces, scale, &mut grads)?;
            }
            batch_err *= scale;
            adam_step(&mut c.view.encoder, &grads.enc, &mut opt.enc)?;
            adam_step(&mut c.reason.net, &grads.reason, &mut opt.reason)?;
            adam_step(&mut c.view.decoder, &grads.dec, &mut opt.dec)?;
            score += batch_err;
            epoch_err += batch_err;
            epoch_batches += 1;
        }
        history.push(EpochLoss {
            train_mse: epoch_err / epoch_batches as f64,
            val_mse: val.map(|v| candidate_mse(c, n, v)).transpose()?,
        });
    }
    Ok((history, score))
}

/// Trains every candidate on the same shuffled windows of length `n + 1`
/// and adds each batch's prediction error to that candidate's score.
/// Returns each candidate's per-epoch mean training MSE.
pub fn train_predictive(
    model: &mut PredictiveModel,
    data: &Dataset,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    threads: usize,
) -> Result<Vec<LossHistory>> {
    let curves = train_predictive_validated(model, data, None, epochs, batch_size, seed, threads)?;
    Ok(curves
        .into_iter()
        .map(|c| c.into_iter().map(|e| e.train_mse).collect())
        .collect())
}

/// [`train_predictive`], also measuring each candidate on `val` after every
/// epoch. Selection still uses only the training score. Candidates share
/// no parameters, so they train on scoped threads when `threads > 1`;
/// results do not depend on the thread count.
pub fn train_predictive_validated(
    model: &mut PredictiveModel,
    data: &Dataset,
    val: Option<&Dataset>,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    threads: usize,
) -> Result<Vec<Vec<EpochLoss>>> {
    check_dataset(model, data)?;
    if let Some(v) = val {
        check_dataset(model, v)?;
    }
    if epochs == 0 {
        return Ok(vec![Vec::new(); model.registry.len()]);
    }
    let config = model.config.clone();
    let candidates = &mut model.registry.candidates;
    let train = |c: &mut Candidate| train_candidate(c, &config, data, val, epochs, batch_size, seed);
    let results: Vec<Result<(Vec<EpochLoss>, f64)>> = if threads <= 1 {
        candidates.iter_mut().map(train).collect()
    } else {
        let per = candidates.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = candidates
                .chunks_mut(per)
                .map(|chunk| s.spawn(|| chunk.iter_mut().map(train).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("training worker panicked"))
                .collect()
        })
    };
    let mut curves = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        let (curve, score) = r?;
        model.registry.scores[i] += score;
        curves.push(curve);
    }
    model.epochs_trained += epochs;
    Ok(curves)
}

fn candidate_mse(c: &Candidate, n: usize, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for span in data.episodes() {
        for chunk in data.episode(span).chunks(n + 1) {
            total += run_sequence(c, n, chunk)?.1.iter().sum::<f64>();
        }
    }
    Ok(total / data.len() as f64)
}

/// Mean one-step prediction MSE of `ŝ' ⊕ r̂` over every record. Each
/// episode is cut into consecutive chunks of `n + 1` records and every
/// chunk starts from a zero context, as training windows and rollouts do.
pub fn prediction_mse(model: &PredictiveModel, idx: usize, data: &Dataset) -> Result<f64> {
    check_dataset(model, data)?;
    candidate_mse(model.candidate(idx), model.config.buffer, data)
}

/// Error of predicting the per-dimension mean of `ŝ' ⊕ r̂`, i.e. the mean
/// target variance.
pub fn mean_predictor_mse(data: &Dataset) -> Result<f64> {
    let width = data.obs_width().ok_or(ModelError::EmptyDataset)? + 1;
    let target = |r: &TransitionRecord, d: usize| {
        if d < width - 1 {
            r.next_obs[d]
        } else {
            r.reward
        }
    };
    let count = data.len() as f64;
    let mut total = 0.0;
    for d in 0..width {
        let mean = data.records().iter().map(|r| target(r, d)).sum::<f64>() / count;
        total += data.records().iter().map(|r| (target(r, d) - mean).powi(2)).sum::<f64>() / count;
    }
    Ok(total / width as f64)
}

/// `k`-step rollouts of the selected candidate. Each starts from the
/// observation of a uniformly drawn record with a zero context; the policy
/// sees only predicted observations, clamped to `[0, 1]`.
pub fn rollout(
    model: &PredictiveModel,
    data: &Dataset,
    policy: &mut dyn FnMut(&[f64]) -> DiscreteAction,
    rollouts: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<TransitionRecord>> {
    if model.epochs_trained == 0 {
        return Err(ModelError::UntrainedModel);
    }
    check_dataset(model, data)?;
    if k == 0 {
        return Err(ModelError::InvalidConfig("rollout depth k must be at least 1".into()));
    }
    let idx = model.selected()?;
    let c = model.candidate(idx);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(rollouts * k);
    for r in 0..rollouts {
        let start = &data.records()[rng.gen_range(0..data.len())];
        let mut s: Vec<f64> = start.obs.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let (mut buf, mut h) = model.fresh_state(idx);
        for t in 0..k {
            let a = policy(&s);
            let p = predict(&c.view, &c.reason, &s, a, &buf, &h)?;
            let next: Vec<f64> = p.next_obs.iter().map(|v| v.clamp(0.0, 1.0)).collect();
            out.push(TransitionRecord {
                episode_id: r as u64,
                step_index: t as u64,
                obs: s,
                action: a.code(),
                reward: p.reward.clamp(ACTIVE_TASK_PENALTY, COMPLETION_REWARD),
                next_obs: next.clone(),
                done: t == k - 1,
                return_to_go: None,
            });
            s = next;
            buf = p.buffer;
            h = p.h;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestCandidate {
    pub name: String,
    pub file: String,
    pub latent: usize,
    pub reason: ReasonVariant,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub config: ModelConfig,
    pub obs_width: usize,
    pub epochs_trained: usize,
    pub candidates: Vec<ManifestCandidate>,
    pub selected: usize,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl PredictiveModel {
    pub fn manifest(&self) -> Result<Manifest> {
        Ok(Manifest {
            config: self.config.clone(),
            obs_width: self.obs_width,
            epochs_trained: self.epochs_trained,
            candidates: self
                .registry
                .candidates
                .iter()
                .zip(&self.registry.scores)
                .enumerate()
                .map(|(i, (c, &score))| ManifestCandidate {
                    name: c.name(),
                    file: format!("candidate_{i}.dwp"),
                    latent: c.view.latent(),
                    reason: c.reason.variant,
                    score,
                })
                .collect(),
            selected: self.selected()?,
        })
    }

    /// Writes one parameter file per candidate (encoder, reasoner and
    /// decoder blocks back to back) and `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = self.manifest()?;
        for (c, entry) in self.registry.candidates.iter().zip(&manifest.candidates) {
            let mut f = std::io::BufWriter::new(fs::File::create(dir.join(&entry.file))?);
            c.view.encoder.write_to(&mut f)?;
            c.reason.net.write_to(&mut f)?;
            c.view.decoder.write_to(&mut f)?;
            f.flush()?;
        }
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| ModelError::BadManifest(e.to_string()))?;
        fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| ModelError::BadManifest(e.to_string()))?;
        let mut candidates = Vec::with_capacity(manifest.candidates.len());
        for entry in &manifest.candidates {
            let mut bytes = Vec::new();
            fs::File::open(dir.join(&entry.file))?.read_to_end(&mut bytes)?;
            let mut r = bytes.as_slice();
            let encoder = DenseNet::read_from(&mut r)?;
            let reason_net = DenseNet::read_from(&mut r)?;
            let decoder = DenseNet::read_from(&mut r)?;
            if !r.is_empty() {
                return Err(ModelError::BadManifest(format!("{}: trailing bytes", entry.file)));
            }
            let (view_name, reason_name) = entry
                .name
                .split_once('+')
                .ok_or_else(|| ModelError::BadManifest(format!("bad name {}", entry.name)))?;
            check_width(entry.latent, encoder.output_width())?;
            candidates.push(Candidate {
                view: ViewTechnique {
                    name: view_name.into(),
                    encoder,
                    decoder,
                },
                reason: ReasonTechnique {
                    name: reason_name.into(),
                    variant: entry.reason,
                    net: reason_net,
                },
            });
        }
        let mut model = PredictiveModel::from_candidates(manifest.config.clone(), candidates)?;
        check_width(manifest.obs_width, model.obs_width)?;
        model.registry.scores = manifest.candidates.iter().map(|c| c.score).collect();
        model.epochs_trained = manifest.epochs_trained;
        if model.selected()? != manifest.selected {
            return Err(ModelError::BadManifest(
                "selected index disagrees with scores".into(),
            ));
        }
        Ok(model)
    }
}
