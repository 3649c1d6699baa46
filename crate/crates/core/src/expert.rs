//! Handcrafted dispatcher and shortest-path driver.
//!
//! This is the predefined policy whose behaviour the predictive model
//! watches. It is deliberately simple: greedy task assignment by Chebyshev
//! distance and breadth-first routing that re-plans every tick.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::sim::{Cell, Controller, DiscreteAction, Heading, WorldState, N_ACTIONS};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExpertError {
    #[error("cell {0:?} is outside the grid")]
    OutOfBounds(Cell),
    #[error("no path from {from:?} to {to:?}")]
    NoPath { from: Cell, to: Cell },
}

/// Cells from source to target inclusive; consecutive cells are 8-neighbours.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathPlan {
    pub waypoints: Vec<Cell>,
}

impl PathPlan {
    pub fn moves(&self) -> usize {
        self.waypoints.len() - 1
    }

    pub fn first_step(&self) -> Option<Heading> {
        let (a, b) = (self.waypoints.first()?, self.waypoints.get(1)?);
        Heading::from_delta(b.0 - a.0, b.1 - a.1)
    }
}

pub fn chebyshev(a: Cell, b: Cell) -> i32 {
    (a.0 - b.0).abs().max((a.1 - b.1).abs())
}

/// Breadth-first shortest path under 8-connected moves. Cells holding a taxi
/// (other than one standing on `from`) are blocked.
pub fn plan_path(world: &WorldState, from: Cell, to: Cell) -> Result<PathPlan, ExpertError> {
    for c in [from, to] {
        if !world.in_bounds(c) {
            return Err(ExpertError::OutOfBounds(c));
        }
    }
    if from == to {
        return Ok(PathPlan {
            waypoints: vec![from],
        });
    }
    let w = world.config().width;
    let h = world.config().height;
    let idx = |(x, y): Cell| y as usize * w + x as usize;
    const UNSEEN: usize = usize::MAX;
    let mut parent = vec![UNSEEN; w * h];
    parent[idx(from)] = idx(from);
    let mut queue = VecDeque::from([from]);
    while let Some(cell) = queue.pop_front() {
        for heading in Heading::ALL {
            let (dx, dy) = heading.delta();
            let next = (cell.0 + dx, cell.1 + dy);
            if !world.in_bounds(next) || parent[idx(next)] != UNSEEN {
                continue;
            }
            if world.occupant(next).is_some() {
                continue;
            }
            parent[idx(next)] = idx(cell);
            if next == to {
                let mut waypoints = vec![to];
                let mut at = idx(to);
                while at != idx(from) {
                    at = parent[at];
                    waypoints.push(((at % w) as i32, (at / w) as i32));
                }
                waypoints.reverse();
                return Ok(PathPlan { waypoints });
            }
            queue.push_back(next);
        }
    }
    Err(ExpertError::NoPath { from, to })
}

/// Greedy matching: open unassigned tasks in issue order, each to the
/// nearest idle taxi (Chebyshev distance to the pickup, lowest id on ties).
pub fn assign_tasks(world: &WorldState) -> BTreeMap<usize, u32> {
    let mut idle: Vec<usize> = world
        .taxis()
        .iter()
        .filter(|t| t.assigned_task.is_none())
        .map(|t| t.id)
        .collect();
    let mut tasks: Vec<_> = world
        .open_tasks()
        .iter()
        .filter(|t| world.assignee(t.id).is_none())
        .collect();
    tasks.sort_by_key(|t| (t.issued_tick, t.id));
    let mut out = BTreeMap::new();
    for task in tasks {
        let Some((slot, _)) = idle
            .iter()
            .enumerate()
            .min_by_key(|(_, &id)| (chebyshev(world.taxis()[id].pos, task.pickup), id))
        else {
            break;
        };
        out.insert(idle.remove(slot), task.id);
    }
    out
}

/// Applies [`assign_tasks`] to the world.
pub fn dispatch(world: &mut WorldState) {
    for (taxi, task) in assign_tasks(world) {
        world
            .assign_task(taxi, task)
            .expect("greedy assignment only pairs idle taxis with free open tasks");
    }
}

/// One action per taxi: drive towards the current target at thrust 1.
pub fn act(world: &WorldState) -> Vec<DiscreteAction> {
    world
        .taxis()
        .iter()
        .map(|taxi| {
            let Some(task) = taxi.assigned_task.and_then(|id| world.task(id)) else {
                return DiscreteAction::NOOP;
            };
            if taxi.thrust > 1 {
                return DiscreteAction::THRUST_DOWN;
            }
            let target = if taxi.carrying.is_some() {
                task.delivery
            } else {
                task.pickup
            };
            plan_path(world, taxi.pos, target)
                .ok()
                .and_then(|p| p.first_step())
                .map_or(DiscreteAction::NOOP, DiscreteAction::movement)
        })
        .collect()
}

/// The expert as a [`Controller`], optionally replacing each taxi's action
/// by a uniform random one with probability `epsilon`.
#[derive(Debug, Clone)]
pub struct ExpertController {
    epsilon: f64,
    rng: ChaCha8Rng,
}

impl ExpertController {
    pub fn new(epsilon: f64, seed: u64) -> Self {
        ExpertController {
            epsilon: epsilon.clamp(0.0, 1.0),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Controller for ExpertController {
    fn act(&mut self, world: &WorldState) -> Vec<DiscreteAction> {
        let mut actions = act(world);
        if self.epsilon > 0.0 {
            for a in &mut actions {
                if self.rng.gen::<f64>() < self.epsilon {
                    *a = DiscreteAction::from_index(self.rng.gen_range(0..N_ACTIONS));
                }
            }
        }
        actions
    }
}
