use std::cell::Cell as StdCell;

use super::{
    Cell, ContinuousAction, DiscreteAction, GridConfig, Heading, Observation, Result,
    SimError, SimRng, TaskOrder, Taxi, ACTIVE_TASK_PENALTY, COMPLETION_REWARD, MAX_THRUST,
    MIN_THRUST, OBS_LEN, WINDOW_SIDE,
};

thread_local! {
    static WORLDS_CONSTRUCTED: StdCell<u64> = const { StdCell::new(0) };
}

/// Number of worlds built (fresh or restored) by the calling thread.
pub fn worlds_constructed_on_thread() -> u64 {
    WORLDS_CONSTRUCTED.with(|c| c.get())
}

fn count_construction() {
    WORLDS_CONSTRUCTED.with(|c| c.set(c.get() + 1));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Role {
    Floor,
    Pickup,
    Delivery,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepInfo {
    /// Tick at which the step was taken (before the increment).
    pub tick: u64,
    pub completed: Vec<TaskOrder>,
    pub spawned: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub done: bool,
    pub info: StepInfo,
}

/// Dense `(channel, row, column)` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl GridTensor {
    pub const TAXI: usize = 0;
    pub const PICKUP: usize = 1;
    pub const DELIVERY: usize = 2;
    pub const CARRYING: usize = 3;

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub(super) config: GridConfig,
    pub(super) tick: u64,
    pub(super) taxis: Vec<Taxi>,
    pub(super) open_tasks: Vec<TaskOrder>,
    pub(super) completed_count: u64,
    pub(super) next_task_id: u32,
    pub(super) rng: SimRng,
    /// Per cell: 0 when empty, otherwise taxi id + 1.
    pub(super) occupancy: Vec<u32>,
    pub(super) roles: Vec<Role>,
    pub(super) active_deliveries: Vec<Cell>,
}

impl WorldState {
    pub fn new(config: GridConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::build(config))
    }

    /// Like [`new`](Self::new) but with taxi `i` starting at `positions[i]`.
    /// Positions must be distinct floor cells inside the grid.
    pub fn with_taxi_positions(config: GridConfig, positions: &[Cell]) -> Result<Self> {
        let bad = |reason: String| SimError::InvalidConfig {
            field: "taxi_positions".into(),
            reason,
        };
        if positions.len() != config.n_taxis {
            return Err(bad(format!(
                "{} positions for {} taxis",
                positions.len(),
                config.n_taxis
            )));
        }
        let mut world = Self::new(config)?;
        world.occupancy.fill(0);
        for (i, &pos) in positions.iter().enumerate() {
            if !world.in_bounds(pos) || world.roles[world.index(pos)] != Role::Floor {
                return Err(bad(format!("{pos:?} is not a floor cell")));
            }
            let idx = world.index(pos);
            if world.occupancy[idx] != 0 {
                return Err(bad(format!("two taxis at {pos:?}")));
            }
            world.occupancy[idx] = i as u32 + 1;
            world.taxis[i].pos = pos;
        }
        Ok(world)
    }

    /// Lays out cells and places taxis without validating the config.
    pub(super) fn build(config: GridConfig) -> Self {
        count_construction();
        let n_cells = config.width * config.height;
        let mut roles = vec![Role::Floor; n_cells];
        for &(x, y) in &config.pickup_cells {
            roles[y as usize * config.width + x as usize] = Role::Pickup;
        }
        for &(x, y, _) in &config.delivery_cells {
            roles[y as usize * config.width + x as usize] = Role::Delivery;
        }
        let mut occupancy = vec![0u32; n_cells];
        let mut taxis = Vec::with_capacity(config.n_taxis);
        for (idx, role) in roles.iter().enumerate() {
            if taxis.len() == config.n_taxis {
                break;
            }
            if *role == Role::Floor {
                let id = taxis.len();
                occupancy[idx] = id as u32 + 1;
                taxis.push(Taxi {
                    id,
                    pos: ((idx % config.width) as i32, (idx / config.width) as i32),
                    heading: Heading::N,
                    thrust: MIN_THRUST,
                    carrying: None,
                    assigned_task: None,
                });
            }
        }
        let active_deliveries = config.active_deliveries().collect();
        let rng = SimRng::new(config.seed);
        WorldState {
            config,
            tick: 0,
            taxis,
            open_tasks: Vec::new(),
            completed_count: 0,
            next_task_id: 0,
            rng,
            occupancy,
            roles,
            active_deliveries,
        }
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn taxis(&self) -> &[Taxi] {
        &self.taxis
    }

    pub fn taxi(&self, id: usize) -> Result<&Taxi> {
        self.taxis.get(id).ok_or(SimError::UnknownTaxi(id))
    }

    pub fn open_tasks(&self) -> &[TaskOrder] {
        &self.open_tasks
    }

    pub fn task(&self, id: u32) -> Option<&TaskOrder> {
        self.open_tasks.iter().find(|t| t.id == id)
    }

    pub fn completed_count(&self) -> u64 {
        self.completed_count
    }

    /// Number of tasks completed so far.
    pub fn score(&self) -> u64 {
        self.completed_count
    }

    pub fn rng(&self) -> &SimRng {
        &self.rng
    }

    pub fn is_done(&self) -> bool {
        self.tick >= self.config.horizon
            || self
                .config
                .completion_target
                .is_some_and(|target| self.completed_count >= target)
    }

    #[inline]
    fn index(&self, (x, y): Cell) -> usize {
        y as usize * self.config.width + x as usize
    }

    #[inline]
    pub fn in_bounds(&self, c: Cell) -> bool {
        self.config.in_bounds(c)
    }

    /// Taxi standing on `cell`, if any.
    pub fn occupant(&self, cell: Cell) -> Option<usize> {
        if !self.in_bounds(cell) {
            return None;
        }
        match self.occupancy[self.index(cell)] {
            0 => None,
            id => Some(id as usize - 1),
        }
    }

    pub fn is_pickup(&self, cell: Cell) -> bool {
        self.in_bounds(cell) && self.roles[self.index(cell)] == Role::Pickup
    }

    pub fn is_delivery(&self, cell: Cell) -> bool {
        self.in_bounds(cell) && self.roles[self.index(cell)] == Role::Delivery
    }

    /// Taxi currently assigned to `task`, if any.
    pub fn assignee(&self, task: u32) -> Option<usize> {
        self.taxis
            .iter()
            .find(|t| t.assigned_task == Some(task))
            .map(|t| t.id)
    }

    /// Hands an open, unassigned task to an idle taxi.
    pub fn assign_task(&mut self, taxi: usize, task: u32) -> Result<()> {
        let t = self.taxi(taxi)?;
        if t.assigned_task.is_some() {
            return Err(SimError::TaxiBusy(taxi));
        }
        if self.task(task).is_none() {
            return Err(SimError::UnknownTask(task));
        }
        if let Some(other) = self.assignee(task) {
            return Err(SimError::TaskTaken { task, taxi: other });
        }
        self.taxis[taxi].assigned_task = Some(task);
        Ok(())
    }

    pub fn step_discrete(&mut self, actions: &[DiscreteAction]) -> Result<StepResult> {
        let mut out = StepResult::default();
        self.step_discrete_into(actions, &mut out)?;
        Ok(out)
    }

    /// Same as [`step_discrete`](Self::step_discrete) but reuses `out`'s buffers.
    pub fn step_discrete_into(
        &mut self,
        actions: &[DiscreteAction],
        out: &mut StepResult,
    ) -> Result<()> {
        if actions.len() != self.taxis.len() {
            return Err(SimError::ActionCountMismatch {
                expected: self.taxis.len(),
                got: actions.len(),
            });
        }
        if self.is_done() {
            return Err(SimError::SteppedAfterDone);
        }
        let n = self.taxis.len();
        out.rewards.clear();
        out.rewards.resize(n, 0.0);
        out.info.tick = self.tick;
        out.info.completed.clear();
        out.info.spawned = None;

        for (id, action) in actions.iter().enumerate() {
            match action.code() {
                0 => {}
                9 => {
                    let t = &mut self.taxis[id];
                    t.thrust = (t.thrust + 1).min(MAX_THRUST);
                }
                10 => {
                    let t = &mut self.taxis[id];
                    t.thrust = t.thrust.saturating_sub(1).max(MIN_THRUST);
                }
                code => {
                    let heading = Heading::from_index(code - 1).expect("codes 1..=8 are moves");
                    self.move_taxi(id, heading);
                }
            }
            out.rewards[id] = self.interact(id, &mut out.info.completed);
        }

        if self.open_tasks.len() < self.config.max_open_tasks
            && !self.config.pickup_cells.is_empty()
            && !self.active_deliveries.is_empty()
            && self.rng.next_f64() < self.config.task_spawn_prob
        {
            let pickup = self.config.pickup_cells[self.rng.below(self.config.pickup_cells.len())];
            let delivery = self.active_deliveries[self.rng.below(self.active_deliveries.len())];
            let id = self.next_task_id;
            self.next_task_id += 1;
            self.open_tasks.push(TaskOrder {
                id,
                pickup,
                delivery,
                issued_tick: self.tick,
                completed_tick: None,
            });
            out.info.spawned = Some(id);
        }

        self.tick += 1;
        out.done = self.is_done();
        out.observations.resize(n, Observation::default());
        for id in 0..n {
            self.observe_into(id, &mut out.observations[id].0);
        }
        Ok(())
    }

    pub fn step_continuous(&mut self, actions: &[ContinuousAction]) -> Result<StepResult> {
        let discrete: Vec<DiscreteAction> = actions.iter().map(ContinuousAction::reduce).collect();
        self.step_discrete(&discrete)
    }

    /// Validates raw slot vectors before stepping.
    pub fn step_continuous_raw(&mut self, actions: &[Vec<f64>]) -> Result<StepResult> {
        let parsed = actions
            .iter()
            .map(|v| ContinuousAction::new(v))
            .collect::<Result<Vec<_>>>()?;
        self.step_continuous(&parsed)
    }

    fn move_taxi(&mut self, id: usize, heading: Heading) {
        let (dx, dy) = heading.delta();
        let (mut x, mut y) = self.taxis[id].pos;
        let start = self.index((x, y));
        for _ in 0..self.taxis[id].thrust {
            let next = (x + dx, y + dy);
            if !self.in_bounds(next) || self.occupancy[self.index(next)] != 0 {
                break;
            }
            (x, y) = next;
        }
        let end = self.index((x, y));
        self.occupancy[start] = 0;
        self.occupancy[end] = id as u32 + 1;
        let t = &mut self.taxis[id];
        t.heading = heading;
        t.pos = (x, y);
    }

    /// Automatic load / unload at the taxi's current cell; returns its reward.
    fn interact(&mut self, id: usize, completed: &mut Vec<TaskOrder>) -> f64 {
        let Some(task_id) = self.taxis[id].assigned_task else {
            return 0.0;
        };
        let Some(slot) = self.open_tasks.iter().position(|t| t.id == task_id) else {
            return 0.0;
        };
        let pos = self.taxis[id].pos;
        let task = &self.open_tasks[slot];
        let taxi = &mut self.taxis[id];
        if taxi.carrying.is_none() {
            if pos == task.pickup {
                taxi.carrying = Some(task_id);
            }
            ACTIVE_TASK_PENALTY
        } else if pos == task.delivery {
            taxi.carrying = None;
            taxi.assigned_task = None;
            let mut done = self.open_tasks.remove(slot);
            done.completed_tick = Some(self.tick);
            completed.push(done);
            self.completed_count += 1;
            COMPLETION_REWARD
        } else {
            ACTIVE_TASK_PENALTY
        }
    }

    pub fn observe(&self, taxi_id: usize) -> Result<Observation> {
        self.taxi(taxi_id)?;
        let mut obs = Observation::default();
        self.observe_into(taxi_id, &mut obs.0);
        Ok(obs)
    }

    fn observe_into(&self, taxi_id: usize, out: &mut [f64; OBS_LEN]) {
        let taxi = &self.taxis[taxi_id];
        let w_span = (self.config.width - 1) as f64;
        let h_span = (self.config.height - 1) as f64;
        let (x, y) = taxi.pos;
        out[Observation::POS_X] = x as f64 / w_span;
        out[Observation::POS_Y] = y as f64 / h_span;
        out[Observation::THRUST] = taxi.thrust as f64 / MAX_THRUST as f64;
        out[Observation::CARRYING] = if taxi.carrying.is_some() { 1.0 } else { 0.0 };
        let target = taxi.assigned_task.and_then(|id| self.task(id)).map(|task| {
            if taxi.carrying.is_some() {
                task.delivery
            } else {
                task.pickup
            }
        });
        let (tdx, tdy) = match target {
            // Offsets in [-span, span] are mapped onto [0, 1]; a taxi without
            // a task reads (0, 0).
            Some((tx, ty)) => (
                ((tx - x) as f64 / w_span + 1.0) / 2.0,
                ((ty - y) as f64 / h_span + 1.0) / 2.0,
            ),
            None => (0.0, 0.0),
        };
        out[Observation::TARGET_DX] = tdx;
        out[Observation::TARGET_DY] = tdy;
        let half = (WINDOW_SIDE / 2) as i32;
        let mut k = Observation::WINDOW;
        for oy in -half..=half {
            for ox in -half..=half {
                let c = (x + ox, y + oy);
                out[k] = if !self.in_bounds(c) {
                    1.0
                } else {
                    let occ = self.occupancy[self.index(c)];
                    if occ != 0 && occ as usize != taxi_id + 1 {
                        1.0
                    } else {
                        0.0
                    }
                };
                k += 1;
            }
        }
        out[Observation::TIME] = self.tick as f64 / self.config.horizon as f64;
    }

    pub fn observe_all(&self) -> Vec<Observation> {
        (0..self.taxis.len())
            .map(|id| {
                let mut o = Observation::default();
                self.observe_into(id, &mut o.0);
                o
            })
            .collect()
    }

    /// Channels: taxi occupancy, pickup cells, delivery cells, carrying taxis.
    pub fn global_tensor(&self) -> GridTensor {
        let (w, h) = (self.config.width, self.config.height);
        let mut t = GridTensor {
            channels: 4,
            height: h,
            width: w,
            data: vec![0.0; 4 * w * h],
        };
        for taxi in &self.taxis {
            let (x, y) = (taxi.pos.0 as usize, taxi.pos.1 as usize);
            t.set(GridTensor::TAXI, y, x, 1.0);
            if taxi.carrying.is_some() {
                t.set(GridTensor::CARRYING, y, x, 1.0);
            }
        }
        for &(x, y) in &self.config.pickup_cells {
            t.set(GridTensor::PICKUP, y as usize, x as usize, 1.0);
        }
        for &(x, y, _) in &self.config.delivery_cells {
            t.set(GridTensor::DELIVERY, y as usize, x as usize, 1.0);
        }
        t
    }

    /// One character per cell: `.` floor, `P` pickup, `D` delivery, taxi id
    /// mod 10 as a digit, or as a letter `A`..`J` when carrying.
    pub fn render_ascii(&self) -> String {
        let (w, h) = (self.config.width, self.config.height);
        let mut out = String::with_capacity((w + 1) * h);
        for y in 0..h {
            if y > 0 {
                out.push('\n');
            }
            for x in 0..w {
                let idx = y * w + x;
                let ch = match self.occupancy[idx] {
                    0 => match self.roles[idx] {
                        Role::Floor => '.',
                        Role::Pickup => 'P',
                        Role::Delivery => 'D',
                    },
                    occ => {
                        let taxi = &self.taxis[occ as usize - 1];
                        let digit = (taxi.id % 10) as u8;
                        if taxi.carrying.is_some() {
                            (b'A' + digit) as char
                        } else {
                            (b'0' + digit) as char
                        }
                    }
                };
                out.push(ch);
            }
        }
        out
    }

    /// Structural invariants; used by restore and by tests.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        for (i, t) in self.taxis.iter().enumerate() {
            if t.id != i {
                return Err(format!("taxi {i} has id {}", t.id));
            }
            if !self.in_bounds(t.pos) {
                return Err(format!("taxi {i} out of bounds at {:?}", t.pos));
            }
            if !seen.insert(t.pos) {
                return Err(format!("two taxis at {:?}", t.pos));
            }
            if self.occupancy[self.index(t.pos)] != i as u32 + 1 {
                return Err(format!("occupancy grid disagrees with taxi {i}"));
            }
            if !(MIN_THRUST..=MAX_THRUST).contains(&t.thrust) {
                return Err(format!("taxi {i} thrust {}", t.thrust));
            }
            if t.carrying.is_some() && t.assigned_task.is_none() {
                return Err(format!("taxi {i} carries without a task"));
            }
            if let Some(task) = t.assigned_task {
                if self.task(task).is_none() {
                    return Err(format!("taxi {i} assigned to unknown task {task}"));
                }
                if t.carrying.is_some_and(|c| c != task) {
                    return Err(format!("taxi {i} carries a container of another task"));
                }
            }
        }
        if self.occupancy.iter().filter(|&&o| o != 0).count() != self.taxis.len() {
            return Err("stray occupancy entries".into());
        }
        let mut assigned = std::collections::HashSet::new();
        for t in self.taxis.iter().filter_map(|t| t.assigned_task) {
            if !assigned.insert(t) {
                return Err(format!("task {t} assigned twice"));
            }
        }
        if self.open_tasks.len() > self.config.max_open_tasks {
            return Err("too many open tasks".into());
        }
        for task in &self.open_tasks {
            if !self.config.pickup_cells.contains(&task.pickup) {
                return Err(format!("task {} pickup is not a pickup cell", task.id));
            }
            if !self.is_delivery(task.delivery) {
                return Err(format!("task {} delivery is not a delivery cell", task.id));
            }
            if task.completed_tick.is_some() {
                return Err(format!("open task {} is completed", task.id));
            }
            if task.id >= self.next_task_id {
                return Err(format!("task id {} ahead of counter", task.id));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) fn config_unchecked(width: usize, height: usize) -> GridConfig {
    GridConfig {
        width,
        height,
        pickup_cells: vec![],
        delivery_cells: vec![],
        n_taxis: 0,
        horizon: 10,
        task_spawn_prob: 0.0,
        max_open_tasks: 0,
        seed: 0,
        completion_target: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg3() -> GridConfig {
        GridConfig {
            width: 3,
            height: 3,
            pickup_cells: vec![(0, 0)],
            delivery_cells: vec![(2, 2, true)],
            n_taxis: 1,
            horizon: 100,
            task_spawn_prob: 0.0,
            max_open_tasks: 4,
            seed: 5,
            completion_target: None,
        }
    }

    fn act(codes: &[u8]) -> Vec<DiscreteAction> {
        codes.iter().map(|&c| DiscreteAction::new(c).unwrap()).collect()
    }

    fn with_task(world: &mut WorldState, pickup: Cell, delivery: Cell) -> u32 {
        let id = world.next_task_id;
        world.next_task_id += 1;
        world.open_tasks.push(TaskOrder {
            id,
            pickup,
            delivery,
            issued_tick: world.tick,
            completed_tick: None,
        });
        id
    }

    #[test]
    fn first_free_cell_placement() {
        let w = WorldState::new(cfg3()).unwrap();
        assert_eq!(w.taxis()[0].pos, (1, 0));
        assert_eq!(w.tick(), 0);
        assert_eq!(w.taxis()[0].thrust, 1);
        assert_eq!(w.taxis()[0].heading, Heading::N);
        assert_eq!(w.score(), 0);
        assert!(w.open_tasks().is_empty());
    }

    #[test]
    fn twenty_taxis_distinct_on_30x30() {
        let cfg = GridConfig {
            width: 30,
            height: 30,
            pickup_cells: (0..10).map(|i| (i * 3, 0)).collect(),
            delivery_cells: (0..10).map(|i| (i * 3, 29, true)).collect(),
            n_taxis: 20,
            ..cfg3()
        };
        let w = WorldState::new(cfg).unwrap();
        let cells: std::collections::HashSet<_> = w.taxis().iter().map(|t| t.pos).collect();
        assert_eq!(cells.len(), 20);
        assert!(w.check_invariants().is_ok());
    }

    #[test]
    fn too_small_grid_rejected() {
        let mut c = cfg3();
        c.width = 2;
        c.height = 2;
        c.n_taxis = 5;
        assert!(matches!(WorldState::new(c), Err(SimError::InvalidConfig { .. })));
    }

    #[test]
    fn delivery_completion_rewards_one() {
        let mut w = WorldState::new(cfg3()).unwrap();
        let id = with_task(&mut w, (0, 0), (2, 2));
        w.assign_task(0, id).unwrap();
        // (1,0) -> W onto pickup
        let r = w.step_discrete(&act(&[7])).unwrap();
        assert_eq!(w.taxis()[0].carrying, Some(id));
        assert_eq!(r.rewards, vec![ACTIVE_TASK_PENALTY]);
        // SE twice: (1,1), (2,2)
        w.step_discrete(&act(&[4])).unwrap();
        let r = w.step_discrete(&act(&[4])).unwrap();
        assert_eq!(r.rewards, vec![1.0]);
        assert_eq!(w.score(), 1);
        assert_eq!(r.info.completed.len(), 1);
        assert_eq!(r.info.completed[0].completed_tick, Some(2));
        assert!(w.open_tasks().is_empty());
        assert_eq!(w.taxis()[0].assigned_task, None);
        assert_eq!(w.taxis()[0].carrying, None);
    }

    #[test]
    fn noop_world_only_advances_tick() {
        let mut w = WorldState::new(cfg3()).unwrap();
        let before = w.clone();
        let r = w.step_discrete(&act(&[0])).unwrap();
        assert_eq!(r.rewards, vec![0.0]);
        assert_eq!(w.tick(), 1);
        assert_eq!(w.taxis(), before.taxis());
        assert_eq!(w.open_tasks(), before.open_tasks());
    }

    #[test]
    fn thrust_bounds_and_multi_cell_moves() {
        let mut c = cfg3();
        c.width = 6;
        c.height = 3;
        c.pickup_cells = vec![(5, 2)];
        c.delivery_cells = vec![(4, 2, true)];
        let mut w = WorldState::new(c).unwrap();
        assert_eq!(w.taxis()[0].pos, (0, 0));
        w.step_discrete(&act(&[10])).unwrap();
        assert_eq!(w.taxis()[0].thrust, 1);
        for _ in 0..4 {
            w.step_discrete(&act(&[9])).unwrap();
        }
        assert_eq!(w.taxis()[0].thrust, 3);
        w.step_discrete(&act(&[3])).unwrap();
        assert_eq!(w.taxis()[0].pos, (3, 0));
        // edge stops the move short
        w.step_discrete(&act(&[3])).unwrap();
        assert_eq!(w.taxis()[0].pos, (5, 0));
        assert_eq!(w.taxis()[0].heading, Heading::E);
    }

    #[test]
    fn blocked_taxi_stops_before_occupied_cell() {
        let mut c = cfg3();
        c.width = 5;
        c.height = 3;
        c.n_taxis = 2;
        c.pickup_cells = vec![(0, 2)];
        c.delivery_cells = vec![(1, 2, true)];
        let mut w = WorldState::new(c).unwrap();
        // taxis at (0,0) and (1,0); move taxi 1 far east, then taxi 0 east at thrust 3
        w.step_discrete(&act(&[9, 0])).unwrap();
        w.step_discrete(&act(&[9, 0])).unwrap();
        w.step_discrete(&act(&[0, 3])).unwrap();
        w.step_discrete(&act(&[0, 3])).unwrap();
        assert_eq!(w.taxis()[1].pos, (3, 0));
        w.step_discrete(&act(&[3, 0])).unwrap();
        assert_eq!(w.taxis()[0].pos, (2, 0));
    }

    #[test]
    fn action_count_and_done_errors() {
        let mut c = cfg3();
        c.horizon = 2;
        let mut w = WorldState::new(c).unwrap();
        assert!(matches!(
            w.step_discrete(&act(&[0, 0])),
            Err(SimError::ActionCountMismatch { expected: 1, got: 2 })
        ));
        assert!(!w.step_discrete(&act(&[0])).unwrap().done);
        assert!(w.step_discrete(&act(&[0])).unwrap().done);
        assert_eq!(w.step_discrete(&act(&[0])), Err(SimError::SteppedAfterDone));
    }

    #[test]
    fn completion_target_ends_episode() {
        let mut c = cfg3();
        c.completion_target = Some(1);
        let mut w = WorldState::new(c).unwrap();
        let id = with_task(&mut w, (0, 0), (2, 2));
        w.assign_task(0, id).unwrap();
        for code in [7, 4] {
            assert!(!w.step_discrete(&act(&[code])).unwrap().done);
        }
        assert!(w.step_discrete(&act(&[4])).unwrap().done);
        assert_eq!(w.score(), 1);
    }

    #[test]
    fn spawn_respects_cap_and_lists() {
        let mut c = cfg3();
        c.task_spawn_prob = 1.0;
        c.max_open_tasks = 3;
        c.delivery_cells = vec![(2, 2, true), (2, 0, false)];
        let mut w = WorldState::new(c).unwrap();
        for i in 0..10 {
            let r = w.step_discrete(&act(&[0])).unwrap();
            assert_eq!(r.info.spawned.is_some(), i < 3);
        }
        assert_eq!(w.open_tasks().len(), 3);
        for t in w.open_tasks() {
            assert_eq!(t.pickup, (0, 0));
            // passive points never receive orders
            assert_eq!(t.delivery, (2, 2));
        }
    }

    #[test]
    fn passive_point_accepts_delivery() {
        let mut c = cfg3();
        c.delivery_cells = vec![(2, 2, true), (2, 0, false)];
        let mut w = WorldState::new(c).unwrap();
        let id = with_task(&mut w, (0, 0), (2, 0));
        w.assign_task(0, id).unwrap();
        w.step_discrete(&act(&[7])).unwrap();
        w.step_discrete(&act(&[3])).unwrap();
        let r = w.step_discrete(&act(&[3])).unwrap();
        assert_eq!(r.rewards, vec![1.0]);
    }

    #[test]
    fn assignment_errors() {
        let mut w = WorldState::new(cfg3()).unwrap();
        assert_eq!(w.assign_task(0, 0), Err(SimError::UnknownTask(0)));
        let id = with_task(&mut w, (0, 0), (2, 2));
        assert_eq!(w.assign_task(3, id), Err(SimError::UnknownTaxi(3)));
        w.assign_task(0, id).unwrap();
        assert_eq!(w.assign_task(0, id), Err(SimError::TaxiBusy(0)));
    }

    #[test]
    fn observation_without_task_and_time() {
        let mut c = cfg3();
        c.horizon = 10;
        let mut w = WorldState::new(c).unwrap();
        for _ in 0..5 {
            w.step_discrete(&act(&[0])).unwrap();
        }
        let o = w.observe(0).unwrap();
        assert_eq!(o.0[Observation::TARGET_DX], 0.0);
        assert_eq!(o.0[Observation::TARGET_DY], 0.0);
        assert_eq!(o.0[Observation::TIME], 0.5);
        assert_eq!(o.0[Observation::POS_X], 0.5);
        assert_eq!(o.0[Observation::THRUST], 1.0 / 3.0);
        assert_eq!(w.observe(1), Err(SimError::UnknownTaxi(1)));
    }

    #[test]
    fn corner_window_counts_out_of_bounds() {
        // brute-force count of 5x5 offsets that leave a grid from a corner
        let outside = (-2i32..=2)
            .flat_map(|dy| (-2i32..=2).map(move |dx| (dx, dy)))
            .filter(|&(dx, dy)| dx < 0 || dy < 0)
            .count();
        assert_eq!(outside, 16);
        let mut c = cfg3();
        c.width = 6;
        c.height = 6;
        c.pickup_cells = vec![(5, 5)];
        c.delivery_cells = vec![(4, 5, true)];
        let w = WorldState::new(c).unwrap();
        assert_eq!(w.taxis()[0].pos, (0, 0));
        let o = w.observe(0).unwrap();
        assert_eq!(o.window().iter().filter(|&&v| v == 1.0).count(), outside);
    }

    #[test]
    fn target_offset_follows_carrying() {
        let mut c = cfg3();
        c.width = 5;
        c.height = 5;
        c.pickup_cells = vec![(0, 0)];
        c.delivery_cells = vec![(4, 4, true)];
        let mut w = WorldState::new(c).unwrap();
        let id = with_task(&mut w, (0, 0), (4, 4));
        w.assign_task(0, id).unwrap();
        let o = w.observe(0).unwrap();
        // taxi at (1,0): pickup offset (-1, 0)
        assert_eq!(o.0[Observation::TARGET_DX], (-0.25 + 1.0) / 2.0);
        assert_eq!(o.0[Observation::TARGET_DY], 0.5);
        w.step_discrete(&act(&[7])).unwrap();
        let o = w.observe(0).unwrap();
        assert_eq!(o.0[Observation::CARRYING], 1.0);
        assert_eq!(o.0[Observation::TARGET_DX], 1.0);
        assert_eq!(o.0[Observation::TARGET_DY], 1.0);
    }

    #[test]
    fn global_tensor_channels() {
        let w = WorldState::new(cfg3()).unwrap();
        let t = w.global_tensor();
        assert_eq!((t.channels, t.height, t.width), (4, 3, 3));
        assert_eq!(t.channel(GridTensor::TAXI).iter().sum::<f64>(), 1.0);
        assert_eq!(t.get(GridTensor::TAXI, 0, 1), 1.0);
        assert_eq!(t.get(GridTensor::PICKUP, 0, 0), 1.0);
        assert_eq!(t.get(GridTensor::DELIVERY, 2, 2), 1.0);
        assert_eq!(t.channel(GridTensor::CARRYING).iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn render_examples() {
        let tiny = WorldState::build(config_unchecked(1, 1));
        assert_eq!(tiny.render_ascii(), ".");
        let w = WorldState::new(cfg3()).unwrap();
        assert_eq!(w.render_ascii(), "P0.\n...\n..D");
        let mut c = cfg3();
        c.pickup_cells = vec![(0, 0), (1, 0), (2, 0), (0, 1)];
        let w = WorldState::new(c).unwrap();
        assert_eq!(w.taxis()[0].pos, (1, 1));
        assert_eq!(w.render_ascii().lines().nth(1).unwrap().chars().nth(1), Some('0'));
    }

    #[test]
    fn carrying_taxi_renders_as_letter() {
        let mut w = WorldState::new(cfg3()).unwrap();
        let id = with_task(&mut w, (0, 0), (2, 2));
        w.assign_task(0, id).unwrap();
        w.step_discrete(&act(&[7])).unwrap();
        assert_eq!(w.render_ascii(), "A..\n...\n..D");
    }
}
