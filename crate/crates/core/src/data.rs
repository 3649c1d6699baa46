//! Transition datasets: collection in the real simulator, window sampling,
//! episode-level splits, and JSON-Lines persistence.
//!
//! Each taxi's trajectory within a world episode is stored as its own
//! dataset episode, so windows, returns-to-go and `done` flags always refer
//! to a single taxi's stream of observations.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::expert::dispatch;
use crate::metrics::{discounted_return, EpisodeStats};
use crate::sim::{Controller, GridConfig, SimError, WorldState, N_ACTIONS};

pub const SCHEMA_VERSION: u32 = 1;
pub const RETURN_DISCOUNT: f64 = 0.99;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    InvalidConfig(#[from] SimError),
    #[error("no episode has at least {needed} steps")]
    DatasetTooShort { needed: usize },
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("malformed line {line_no}: {reason}")]
    MalformedLine { line_no: usize, reason: String },
    #[error("need at least 2 episodes to split, have {0}")]
    TooFewEpisodes(usize),
    #[error("split fraction {0} outside (0, 1)")]
    BadFraction(f64),
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
    #[error("episode count must be at least 1")]
    NoEpisodes,
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRecord {
    pub episode_id: u64,
    pub step_index: u64,
    pub obs: Vec<f64>,
    pub action: u8,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
    pub return_to_go: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub schema_version: u32,
    pub config_hash: String,
    pub policy: String,
    pub seed: u64,
}

impl DatasetMeta {
    pub fn new(config_hash: impl Into<String>, policy: impl Into<String>, seed: u64) -> Self {
        DatasetMeta {
            schema_version: SCHEMA_VERSION,
            config_hash: config_hash.into(),
            policy: policy.into(),
            seed,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    meta: DatasetMeta,
}

/// Records `start..end` of the dataset belong to `episode_id`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSpan {
    pub episode_id: u64,
    pub start: usize,
    pub end: usize,
}

impl EpisodeSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<TransitionRecord>,
    episodes: Vec<EpisodeSpan>,
    meta: DatasetMeta,
}

/// Short stable fingerprint of a grid config.
pub fn config_hash(config: &GridConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Fills `return_to_go` backwards with `G_t = r_t + γ·G_{t+1}`.
pub fn fill_returns_to_go(records: &mut [TransitionRecord], gamma: f64) {
    let mut next: Option<f64> = None;
    for rec in records.iter_mut().rev() {
        let g = match next {
            Some(g_next) => rec.reward + gamma * g_next,
            None => rec.reward,
        };
        rec.return_to_go = Some(g);
        next = Some(g);
    }
}

impl Dataset {
    /// Builds the episode index; episodes must be contiguous with
    /// consecutive step indices and `done` only on their last record.
    pub fn from_records(meta: DatasetMeta, records: Vec<TransitionRecord>) -> Result<Self> {
        let bad = |msg: String| Err(DataError::Inconsistent(msg));
        let mut episodes: Vec<EpisodeSpan> = Vec::new();
        let width = records.first().map(|r| r.obs.len());
        for (i, rec) in records.iter().enumerate() {
            if Some(rec.obs.len()) != width || rec.next_obs.len() != rec.obs.len() {
                return bad(format!("record {i} has inconsistent observation width"));
            }
            if rec.action as usize >= N_ACTIONS {
                return bad(format!("record {i} has invalid action code {}", rec.action));
            }
            match episodes.last_mut() {
                Some(span) if span.episode_id == rec.episode_id => {
                    let prev = &records[i - 1];
                    if prev.done {
                        return bad(format!("record {} is done but not last", i - 1));
                    }
                    if rec.step_index != prev.step_index + 1 {
                        return bad(format!("record {i} breaks the step sequence"));
                    }
                    span.end = i + 1;
                }
                _ => {
                    if episodes.iter().any(|s| s.episode_id == rec.episode_id) {
                        return bad(format!("episode {} is not contiguous", rec.episode_id));
                    }
                    episodes.push(EpisodeSpan {
                        episode_id: rec.episode_id,
                        start: i,
                        end: i + 1,
                    });
                }
            }
        }
        Ok(Dataset {
            records,
            episodes,
            meta,
        })
    }

    pub fn records(&self) -> &[TransitionRecord] {
        &self.records
    }

    pub fn episodes(&self) -> &[EpisodeSpan] {
        &self.episodes
    }

    pub fn episode(&self, span: &EpisodeSpan) -> &[TransitionRecord] {
        &self.records[span.start..span.end]
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn obs_width(&self) -> Option<usize> {
        self.records.first().map(|r| r.obs.len())
    }

    /// Start indices of every in-episode window of `window_len` records.
    pub fn window_starts(&self, window_len: usize) -> Vec<usize> {
        self.episodes
            .iter()
            .filter(|s| s.len() >= window_len && window_len > 0)
            .flat_map(|s| s.start..=s.end - window_len)
            .collect()
    }

    pub fn window(&self, start: usize, window_len: usize) -> &[TransitionRecord] {
        &self.records[start..start + window_len]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> Result<()> {
        let meta = MetaLine {
            meta: self.meta.clone(),
        };
        serde_json::to_writer(&mut *w, &meta).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        for rec in &self.records {
            serde_json::to_writer(&mut *w, rec).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let malformed = |line_no: usize, e: serde_json::Error| DataError::MalformedLine {
            line_no,
            reason: e.to_string(),
        };
        let first = lines.next().ok_or(DataError::MalformedLine {
            line_no: 1,
            reason: "missing meta line".into(),
        })??;
        let meta: MetaLine = serde_json::from_str(&first).map_err(|e| malformed(1, e))?;
        if meta.meta.schema_version != SCHEMA_VERSION {
            return Err(DataError::MalformedLine {
                line_no: 1,
                reason: format!("unsupported schema_version {}", meta.meta.schema_version),
            });
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let rec: TransitionRecord =
                serde_json::from_str(&line).map_err(|e| malformed(i + 2, e))?;
            records.push(rec);
        }
        Self::from_records(meta.meta, records)
    }

    /// Windows of `n + 1` consecutive records drawn uniformly (with
    /// replacement) from all windows that stay inside one episode.
    pub fn sample_batch(
        &self,
        batch_size: usize,
        n: usize,
        seed: u64,
    ) -> Result<Vec<&[TransitionRecord]>> {
        let starts = self.window_starts(n + 1);
        if starts.is_empty() {
            return Err(DataError::DatasetTooShort { needed: n + 1 });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..batch_size)
            .map(|_| self.window(starts[rng.gen_range(0..starts.len())], n + 1))
            .collect())
    }

    /// Splits whole episodes after a seeded shuffle; both halves keep the
    /// original record order.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(DataError::BadFraction(fraction));
        }
        let n = self.episodes.len();
        if n < 2 {
            return Err(DataError::TooFewEpisodes(n));
        }
        let n_train = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut in_train = vec![false; n];
        for &i in &order[..n_train] {
            in_train[i] = true;
        }
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (i, span) in self.episodes.iter().enumerate() {
            let dst = if in_train[i] { &mut train } else { &mut val };
            dst.extend_from_slice(self.episode(span));
        }
        Ok((
            Dataset::from_records(self.meta.clone(), train)?,
            Dataset::from_records(self.meta.clone(), val)?,
        ))
    }
}

/// Derives an independent 64-bit seed for stream `index` of a base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-taxi transitions and summary of one world episode.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub per_taxi: Vec<Vec<TransitionRecord>>,
    pub stats: EpisodeStats,
}

/// Runs one episode in a fresh world. Before every decision the expert
/// dispatcher hands open tasks to idle taxis; the controller only drives.
/// Records' `next_obs` is what the controller will see next (after dispatch).
pub fn run_episode(
    config: &GridConfig,
    controller: &mut dyn Controller,
    episode_index: u64,
    record: bool,
) -> Result<EpisodeOutcome> {
    let mut world = WorldState::new(config.clone())?;
    let n = world.taxis().len();
    dispatch(&mut world);
    let mut obs = world.observe_all();
    let mut per_taxi: Vec<Vec<TransitionRecord>> = vec![Vec::new(); n];
    let mut team_rewards = Vec::new();
    let mut step = 0u64;
    loop {
        let actions = controller.act(&world);
        let res = world.step_discrete(&actions)?;
        if !res.done {
            dispatch(&mut world);
        }
        let next = world.observe_all();
        if record {
            for taxi in 0..n {
                per_taxi[taxi].push(TransitionRecord {
                    episode_id: episode_index * n as u64 + taxi as u64,
                    step_index: step,
                    obs: obs[taxi].to_vec(),
                    action: actions[taxi].code(),
                    reward: res.rewards[taxi],
                    next_obs: next[taxi].to_vec(),
                    done: res.done,
                    return_to_go: None,
                });
            }
        }
        team_rewards.push(res.rewards.iter().sum::<f64>());
        step += 1;
        obs = next;
        if res.done {
            break;
        }
    }
    for traj in &mut per_taxi {
        fill_returns_to_go(traj, RETURN_DISCOUNT);
    }
    let stats = EpisodeStats {
        undiscounted_return: team_rewards.iter().sum(),
        discounted_return: discounted_return(&team_rewards, RETURN_DISCOUNT)
            .expect("constant discount is valid"),
        score: world.score(),
        length: step,
        seed: config.seed,
    };
    Ok(EpisodeOutcome { per_taxi, stats })
}

/// Worker threads for episode sharding, from `DW_THREADS` (default 1).
pub fn worker_count() -> usize {
    std::env::var("DW_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Runs `episodes` episodes with per-episode world seeds derived from
/// `seed`, sharded over [`worker_count`] threads; results come back in
/// episode order regardless of sharding.
pub fn run_episodes<F, C>(
    config: &GridConfig,
    make_controller: F,
    episodes: usize,
    seed: u64,
    record: bool,
) -> Result<Vec<EpisodeOutcome>>
where
    F: Fn(u64) -> C + Sync,
    C: Controller,
{
    if episodes == 0 {
        return Err(DataError::NoEpisodes);
    }
    config.validate()?;
    let run = |e: usize| -> Result<EpisodeOutcome> {
        let mut cfg = config.clone();
        cfg.seed = derive_seed(seed, 2 * e as u64);
        let mut controller = make_controller(derive_seed(seed, 2 * e as u64 + 1));
        run_episode(&cfg, &mut controller, e as u64, record)
    };
    let threads = worker_count().min(episodes);
    if threads <= 1 {
        return (0..episodes).map(run).collect();
    }
    let chunk = episodes.div_ceil(threads);
    let shards: Vec<Result<Vec<EpisodeOutcome>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let run = &run;
                s.spawn(move || {
                    (t * chunk..((t + 1) * chunk).min(episodes))
                        .map(run)
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("episode worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(episodes);
    for shard in shards {
        out.extend(shard?);
    }
    Ok(out)
}

/// Collects a dataset by running `make_controller`'s policy in fresh worlds.
pub fn collect<F, C>(
    config: &GridConfig,
    policy_name: &str,
    make_controller: F,
    episodes: usize,
    seed: u64,
) -> Result<Dataset>
where
    F: Fn(u64) -> C + Sync,
    C: Controller,
{
    let outcomes = run_episodes(config, make_controller, episodes, seed, true)?;
    let records = outcomes
        .into_iter()
        .flat_map(|o| o.per_taxi.into_iter().flatten())
        .collect();
    Dataset::from_records(
        DatasetMeta::new(config_hash(config), policy_name, seed),
        records,
    )
}
