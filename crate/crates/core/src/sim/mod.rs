//! Cube-based ASRS grid simulator.
//!
//! Taxis hop between cells of a rectangular grid, loading containers at
//! pickup cells and dropping them at delivery cells. The world is fully
//! deterministic: all randomness comes from a counter-based generator owned
//! by the [`WorldState`], so a snapshot captures everything needed to replay.
//!
//! Coordinates are `(x, y)` with `x` the column and `y` the row; row 0 is the
//! top of the rendered grid and north points towards it.

mod rng;
mod snapshot;
mod world;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use rng::SimRng;
pub use world::{worlds_constructed_on_thread, GridTensor, StepInfo, StepResult, WorldState};

/// A grid cell as `(x, y)`.
pub type Cell = (i32, i32);

/// Number of discrete action codes (no-op, 8 moves, thrust up, thrust down).
pub const N_ACTIONS: usize = 11;

/// Side of the square occupancy window in each observation.
pub const WINDOW_SIDE: usize = 5;

/// Observation width: position (2), thrust (1), carrying (1), target offset
/// (2), occupancy window (25), episode time (1).
pub const OBS_LEN: usize = 6 + WINDOW_SIDE * WINDOW_SIDE + 1;

pub const MIN_THRUST: u8 = 1;
pub const MAX_THRUST: u8 = 3;

pub const COMPLETION_REWARD: f64 = 1.0;
pub const ACTIVE_TASK_PENALTY: f64 = -0.001;

pub const DEFAULT_HORIZON: u64 = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("expected {expected} actions, got {got}")]
    ActionCountMismatch { expected: usize, got: usize },
    #[error("world stepped after the episode ended")]
    SteppedAfterDone,
    #[error("continuous action slot {slot} has value {value}, outside [0, 1]")]
    ComponentOutOfRange { slot: usize, value: f64 },
    #[error("continuous action has {0} slots, expected 11")]
    ContinuousWidth(usize),
    #[error("action code {0} out of range 0..=10")]
    InvalidAction(u8),
    #[error("unknown taxi {0}")]
    UnknownTaxi(usize),
    #[error("unknown or completed task {0}")]
    UnknownTask(u32),
    #[error("task {task} is already assigned to taxi {taxi}")]
    TaskTaken { task: u32, taxi: usize },
    #[error("taxi {0} already has a task")]
    TaxiBusy(usize),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("cannot read config: {0}")]
    ConfigIo(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> SimError {
    SimError::InvalidConfig {
        field: field.into(),
        reason: reason.into(),
    }
}

fn default_horizon() -> u64 {
    DEFAULT_HORIZON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    pub pickup_cells: Vec<Cell>,
    /// `(x, y, active)`; passive delivery points accept deliveries but never
    /// receive new orders.
    pub delivery_cells: Vec<(i32, i32, bool)>,
    pub n_taxis: usize,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    pub task_spawn_prob: f64,
    pub max_open_tasks: usize,
    pub seed: u64,
    #[serde(default)]
    pub completion_target: Option<u64>,
}

impl GridConfig {
    pub fn in_bounds(&self, (x, y): Cell) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn free_cell_capacity(&self) -> usize {
        (self.width * self.height).saturating_sub(self.pickup_cells.len() + self.delivery_cells.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 3 {
            return Err(invalid("width", format!("{} < 3", self.width)));
        }
        if self.height < 3 {
            return Err(invalid("height", format!("{} < 3", self.height)));
        }
        if self.width > i32::MAX as usize / 4 || self.height > i32::MAX as usize / 4 {
            return Err(invalid("width", "grid too large"));
        }
        let mut seen = std::collections::HashSet::new();
        for (i, &c) in self.pickup_cells.iter().enumerate() {
            let field = format!("pickup_cells[{i}]");
            if !self.in_bounds(c) {
                return Err(invalid(field, format!("{c:?} outside the grid")));
            }
            if !seen.insert(c) {
                return Err(invalid(field, format!("{c:?} listed twice")));
            }
        }
        for (i, &(x, y, _)) in self.delivery_cells.iter().enumerate() {
            let field = format!("delivery_cells[{i}]");
            if !self.in_bounds((x, y)) {
                return Err(invalid(field, format!("{:?} outside the grid", (x, y))));
            }
            if !seen.insert((x, y)) {
                return Err(invalid(field, format!("{:?} overlaps another cell", (x, y))));
            }
        }
        if self.n_taxis == 0 {
            return Err(invalid("n_taxis", "need at least one taxi"));
        }
        if self.n_taxis > self.free_cell_capacity() {
            return Err(invalid(
                "n_taxis",
                format!("{} taxis but only {} free cells", self.n_taxis, self.free_cell_capacity()),
            ));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.task_spawn_prob) {
            return Err(invalid(
                "task_spawn_prob",
                format!("{} outside [0, 1]", self.task_spawn_prob),
            ));
        }
        if self.completion_target == Some(0) {
            return Err(invalid("completion_target", "must be at least 1 when set"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: GridConfig =
            serde_json::from_str(text).map_err(|e| SimError::ConfigIo(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::ConfigIo(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn active_deliveries(&self) -> impl Iterator<Item = Cell> + '_ {
        self.delivery_cells
            .iter()
            .filter(|d| d.2)
            .map(|&(x, y, _)| (x, y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    N,
    NE,
    E,
    SE,
    S,
    SW,
    W,
    NW,
}

impl Heading {
    pub const ALL: [Heading; 8] = [
        Heading::N,
        Heading::NE,
        Heading::E,
        Heading::SE,
        Heading::S,
        Heading::SW,
        Heading::W,
        Heading::NW,
    ];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Heading::N => (0, -1),
            Heading::NE => (1, -1),
            Heading::E => (1, 0),
            Heading::SE => (1, 1),
            Heading::S => (0, 1),
            Heading::SW => (-1, 1),
            Heading::W => (-1, 0),
            Heading::NW => (-1, -1),
        }
    }

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }

    pub fn from_delta(dx: i32, dy: i32) -> Option<Self> {
        Self::ALL.into_iter().find(|h| h.delta() == (dx, dy))
    }
}

/// Action code: 0 no-op, 1..=8 move N, NE, E, SE, S, SW, W, NW, 9 thrust up,
/// 10 thrust down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct DiscreteAction(u8);

impl DiscreteAction {
    pub const NOOP: DiscreteAction = DiscreteAction(0);
    pub const THRUST_UP: DiscreteAction = DiscreteAction(9);
    pub const THRUST_DOWN: DiscreteAction = DiscreteAction(10);

    pub fn new(code: u8) -> Result<Self> {
        if (code as usize) < N_ACTIONS {
            Ok(DiscreteAction(code))
        } else {
            Err(SimError::InvalidAction(code))
        }
    }

    pub fn from_index(i: usize) -> Self {
        assert!(i < N_ACTIONS, "action index {i} out of range");
        DiscreteAction(i as u8)
    }

    pub fn movement(h: Heading) -> Self {
        DiscreteAction(h.index() + 1)
    }

    pub fn code(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn heading(self) -> Option<Heading> {
        match self.0 {
            1..=8 => Heading::from_index(self.0 - 1),
            _ => None,
        }
    }
}

impl TryFrom<u8> for DiscreteAction {
    type Error = SimError;
    fn try_from(code: u8) -> Result<Self> {
        DiscreteAction::new(code)
    }
}

impl From<DiscreteAction> for u8 {
    fn from(a: DiscreteAction) -> u8 {
        a.0
    }
}

/// Eleven "on/off" levels in `[0, 1]`, one per discrete action code.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousAction {
    values: [f64; N_ACTIONS],
}

impl ContinuousAction {
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.len() != N_ACTIONS {
            return Err(SimError::ContinuousWidth(values.len()));
        }
        let mut out = [0.0; N_ACTIONS];
        for (slot, (&v, o)) in values.iter().zip(out.iter_mut()).enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(SimError::ComponentOutOfRange { slot, value: v });
            }
            *o = v;
        }
        Ok(ContinuousAction { values: out })
    }

    pub fn values(&self) -> &[f64; N_ACTIONS] {
        &self.values
    }

    /// The highest slot among 1..=10 at or above 0.5 fires; lowest index
    /// wins ties. Below threshold everywhere means no-op.
    pub fn reduce(&self) -> DiscreteAction {
        let mut best: Option<(usize, f64)> = None;
        for slot in 1..N_ACTIONS {
            let v = self.values[slot];
            if v >= 0.5 && best.is_none_or(|(_, b)| v > b) {
                best = Some((slot, v));
            }
        }
        best.map_or(DiscreteAction::NOOP, |(slot, _)| DiscreteAction(slot as u8))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxi {
    pub id: usize,
    pub pos: Cell,
    pub heading: Heading,
    pub thrust: u8,
    /// Container id; containers are numbered by the task that ordered them.
    pub carrying: Option<u32>,
    pub assigned_task: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskOrder {
    pub id: u32,
    pub pickup: Cell,
    pub delivery: Cell,
    pub issued_tick: u64,
    pub completed_tick: Option<u64>,
}

/// Taxi-local sensor reading; see [`OBS_LEN`] for the layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; OBS_LEN]);

impl Observation {
    pub const POS_X: usize = 0;
    pub const POS_Y: usize = 1;
    pub const THRUST: usize = 2;
    pub const CARRYING: usize = 3;
    pub const TARGET_DX: usize = 4;
    pub const TARGET_DY: usize = 5;
    pub const WINDOW: usize = 6;
    pub const TIME: usize = OBS_LEN - 1;

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.to_vec()
    }

    pub fn window(&self) -> &[f64] {
        &self.0[Self::WINDOW..Self::WINDOW + WINDOW_SIDE * WINDOW_SIDE]
    }
}

impl Default for Observation {
    fn default() -> Self {
        Observation([0.0; OBS_LEN])
    }
}

/// Decentralized controller: one action per taxi given the whole world.
pub trait Controller {
    fn act(&mut self, world: &WorldState) -> Vec<DiscreteAction>;
}

/// Uniformly random discrete actions, independently per taxi.
#[derive(Debug, Clone)]
pub struct RandomController {
    rng: ChaCha8Rng,
}

impl RandomController {
    pub fn new(seed: u64) -> Self {
        RandomController {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Controller for RandomController {
    fn act(&mut self, world: &WorldState) -> Vec<DiscreteAction> {
        (0..world.taxis().len())
            .map(|_| DiscreteAction::from_index(self.rng.gen_range(0..N_ACTIONS)))
            .collect()
    }
}
