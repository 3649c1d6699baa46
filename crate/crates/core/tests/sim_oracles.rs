use std::collections::HashMap;

use deep_warehouse::expert;
use deep_warehouse::sim::*;
use proptest::prelude::*;

fn open_grid(w: usize, h: usize, n_taxis: usize) -> GridConfig {
    GridConfig {
        width: w,
        height: h,
        pickup_cells: vec![(0, 0)],
        delivery_cells: vec![((w - 1) as i32, (h - 1) as i32, true)],
        n_taxis,
        horizon: 500,
        task_spawn_prob: 0.0,
        max_open_tasks: 1,
        seed: 0,
        completion_target: None,
    }
}

/// Straightforward reference for taxi motion in a world without tasks.
struct Motion {
    w: i32,
    h: i32,
    pos: Vec<Cell>,
    thrust: Vec<u8>,
}

impl Motion {
    fn step(&mut self, actions: &[DiscreteAction]) {
        for (id, action) in actions.iter().enumerate() {
            match action.code() {
                0 => {}
                9 => self.thrust[id] = (self.thrust[id] + 1).min(3),
                10 => self.thrust[id] = (self.thrust[id] - 1).max(1),
                m => {
                    let (dx, dy) = Heading::ALL[m as usize - 1].delta();
                    for _ in 0..self.thrust[id] {
                        let next = (self.pos[id].0 + dx, self.pos[id].1 + dy);
                        let inside = next.0 >= 0 && next.1 >= 0 && next.0 < self.w && next.1 < self.h;
                        if !inside || self.pos.contains(&next) {
                            break;
                        }
                        self.pos[id] = next;
                    }
                }
            }
        }
    }
}

#[test]
fn initial_placement_is_row_major_over_floor_cells() {
    for (w, h, n) in [(3, 3, 1), (3, 3, 7), (5, 4, 6), (30, 30, 20)] {
        let cfg = open_grid(w, h, n);
        let world = WorldState::new(cfg.clone()).unwrap();
        let special: Vec<Cell> = cfg
            .pickup_cells
            .iter()
            .copied()
            .chain(cfg.delivery_cells.iter().map(|&(x, y, _)| (x, y)))
            .collect();
        let expected: Vec<Cell> = (0..h as i32)
            .flat_map(|y| (0..w as i32).map(move |x| (x, y)))
            .filter(|c| !special.contains(c))
            .take(n)
            .collect();
        let got: Vec<Cell> = world.taxis().iter().map(|t| t.pos).collect();
        assert_eq!(got, expected);
    }
}

#[test]
fn every_joint_action_on_3x3_with_two_taxis_matches_reference() {
    // all placements of two taxis on the 7 floor cells, all 11 x 11 action pairs,
    // and all thrust levels
    let cfg = open_grid(3, 3, 2);
    let floor: Vec<Cell> = (0..3)
        .flat_map(|y| (0..3).map(move |x| (x, y)))
        .filter(|&c| c != (0, 0) && c != (2, 2))
        .collect();
    let mut cases = 0;
    for &p0 in &floor {
        for &p1 in floor.iter().filter(|&&c| c != p0) {
            for t0 in 1..=3u8 {
                for t1 in 1..=3u8 {
                    for a0 in 0..N_ACTIONS {
                        for a1 in 0..N_ACTIONS {
                            let mut world = WorldState::with_taxi_positions(cfg.clone(), &[p0, p1]).unwrap();
                            for (id, t) in [(0, t0), (1, t1)] {
                                for _ in 1..t {
                                    let mut a = [DiscreteAction::NOOP; 2];
                                    a[id] = DiscreteAction::THRUST_UP;
                                    world.step_discrete(&a).unwrap();
                                }
                            }
                            let mut reference = Motion { w: 3, h: 3, pos: vec![p0, p1], thrust: vec![t0, t1] };
                            let actions = [DiscreteAction::from_index(a0), DiscreteAction::from_index(a1)];
                            world.step_discrete(&actions).unwrap();
                            reference.step(&actions);
                            let pos: Vec<Cell> = world.taxis().iter().map(|t| t.pos).collect();
                            let thrust: Vec<u8> = world.taxis().iter().map(|t| t.thrust).collect();
                            assert_eq!(pos, reference.pos, "{p0:?} {p1:?} t={t0},{t1} a={a0},{a1}");
                            assert_eq!(thrust, reference.thrust);
                            assert_ne!(pos[0], pos[1]);
                            world.check_invariants().unwrap();
                            cases += 1;
                        }
                    }
                }
            }
        }
    }
    assert_eq!(cases, 42 * 9 * 121);
}

#[test]
fn placement_constructor_rejects_bad_layouts() {
    let cfg = open_grid(3, 3, 2);
    assert!(WorldState::with_taxi_positions(cfg.clone(), &[(1, 0)]).is_err());
    assert!(WorldState::with_taxi_positions(cfg.clone(), &[(1, 0), (1, 0)]).is_err());
    assert!(WorldState::with_taxi_positions(cfg.clone(), &[(1, 0), (0, 0)]).is_err());
    assert!(WorldState::with_taxi_positions(cfg.clone(), &[(1, 0), (3, 0)]).is_err());
    let w = WorldState::with_taxi_positions(cfg, &[(2, 1), (0, 2)]).unwrap();
    assert_eq!(w.occupant((2, 1)), Some(0));
    assert_eq!(w.occupant((0, 2)), Some(1));
    assert_eq!(w.occupant((1, 0)), None);
    w.check_invariants().unwrap();
}

fn busy_grid(w: usize, h: usize, n_taxis: usize, seed: u64) -> GridConfig {
    GridConfig {
        width: w,
        height: h,
        pickup_cells: vec![(0, 0), ((w - 1) as i32, 0)],
        delivery_cells: vec![(0, (h - 1) as i32, true), ((w - 1) as i32, (h - 1) as i32, false)],
        n_taxis,
        horizon: 120,
        task_spawn_prob: 0.4,
        max_open_tasks: 3,
        seed,
        completion_target: None,
    }
}

fn action_strategy(n: usize) -> impl Strategy<Value = Vec<Vec<u8>>> {
    prop::collection::vec(prop::collection::vec(0u8..11, n), 1..80)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn taskless_motion_matches_reference(
        w in 3usize..7, h in 3usize..7, n in 1usize..6, seed in any::<u64>(),
        script in action_strategy(5),
    ) {
        let cfg = open_grid(w, h, n);
        let mut world = WorldState::new(GridConfig { seed, ..cfg }).unwrap();
        let mut reference = Motion {
            w: w as i32,
            h: h as i32,
            pos: world.taxis().iter().map(|t| t.pos).collect(),
            thrust: vec![1; n],
        };
        for codes in &script {
            let actions: Vec<_> = codes[..n].iter().map(|&c| DiscreteAction::new(c).unwrap()).collect();
            world.step_discrete(&actions).unwrap();
            reference.step(&actions);
            let pos: Vec<Cell> = world.taxis().iter().map(|t| t.pos).collect();
            prop_assert_eq!(&pos, &reference.pos);
        }
    }

    #[test]
    fn invariants_hold_under_dispatch_and_random_actions(
        w in 3usize..8, h in 3usize..8, n in 1usize..5, seed in any::<u64>(),
        script in action_strategy(4),
    ) {
        let mut world = WorldState::new(busy_grid(w, h, n, seed)).unwrap();
        let mut last_score = 0;
        for codes in &script {
            if world.is_done() {
                break;
            }
            expert::dispatch(&mut world);
            let actions: Vec<_> = codes[..n].iter().map(|&c| DiscreteAction::new(c).unwrap()).collect();
            let res = world.step_discrete(&actions).unwrap();
            prop_assert!(world.check_invariants().is_ok(), "{:?}", world.check_invariants());
            prop_assert!(world.score() >= last_score);
            last_score = world.score();
            let allowed = [0.0, ACTIVE_TASK_PENALTY, COMPLETION_REWARD, COMPLETION_REWARD + ACTIVE_TASK_PENALTY];
            for r in &res.rewards {
                prop_assert!(allowed.iter().any(|a| (a - r).abs() < 1e-12), "reward {}", r);
            }
            for obs in &res.observations {
                prop_assert!(obs.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn replay_and_snapshot_are_deterministic(
        seed in any::<u64>(), n in 1usize..4, cut in 0usize..40,
        script in action_strategy(3),
    ) {
        let cfg = busy_grid(5, 5, n, seed);
        let run = |from: Option<Vec<u8>>| {
            let mut world = match &from {
                Some(bytes) => WorldState::restore(bytes).unwrap(),
                None => WorldState::new(cfg.clone()).unwrap(),
            };
            let skip = if from.is_some() { cut.min(script.len()) } else { 0 };
            let mut snap_at_cut = None;
            for (i, codes) in script.iter().enumerate().skip(skip) {
                if i == cut && from.is_none() {
                    snap_at_cut = Some(world.snapshot());
                }
                if world.is_done() {
                    break;
                }
                expert::dispatch(&mut world);
                let actions: Vec<_> = codes[..n].iter().map(|&c| DiscreteAction::new(c).unwrap()).collect();
                world.step_discrete(&actions).unwrap();
            }
            (world.snapshot(), snap_at_cut)
        };
        let (a, snap) = run(None);
        let (b, _) = run(None);
        prop_assert_eq!(&a, &b);
        if let Some(snap) = snap {
            let (c, _) = run(Some(snap));
            prop_assert_eq!(&a, &c);
        }
    }

    #[test]
    fn render_identifies_taxi_positions(
        w in 3usize..8, h in 3usize..8, n in 1usize..6, seed in any::<u64>(),
        script in action_strategy(5),
    ) {
        let mut world = WorldState::new(GridConfig { seed, ..open_grid(w, h, n) }).unwrap();
        let mut seen: HashMap<String, Vec<Cell>> = HashMap::new();
        for codes in &script {
            let render = world.render_ascii();
            let rows: Vec<&str> = render.lines().collect();
            prop_assert_eq!(rows.len(), h);
            let pos: Vec<Cell> = world.taxis().iter().map(|t| t.pos).collect();
            for (y, row) in rows.iter().enumerate() {
                prop_assert_eq!(row.chars().count(), w);
                for (x, ch) in row.chars().enumerate() {
                    let cell = (x as i32, y as i32);
                    match pos.iter().position(|&p| p == cell) {
                        Some(id) => prop_assert_eq!(ch, char::from_digit(id as u32 % 10, 10).unwrap()),
                        None => prop_assert!(matches!(ch, '.' | 'P' | 'D'), "{:?}", ch),
                    }
                }
            }
            if let Some(prev) = seen.insert(render, pos.clone()) {
                prop_assert_eq!(prev, pos);
            }
            let actions: Vec<_> = codes[..n].iter().map(|&c| DiscreteAction::new(c).unwrap()).collect();
            world.step_discrete(&actions).unwrap();
        }
    }
}

#[test]
fn observations_are_pure_functions_of_state() {
    let mut world = WorldState::new(busy_grid(6, 5, 3, 11)).unwrap();
    for i in 0..60u8 {
        expert::dispatch(&mut world);
        let before = world.observe_all();
        let copy = WorldState::restore(&world.snapshot()).unwrap();
        assert_eq!(copy.observe_all(), before);
        assert_eq!(world.observe_all(), before);
        let a: Vec<_> = (0..3).map(|k| DiscreteAction::from_index(((i as usize) * 7 + k * 3) % N_ACTIONS)).collect();
        world.step_discrete(&a).unwrap();
    }
}
