//! Binary world snapshots.
//!
//! Layout (little-endian): magic `DWH1`, `u16` version, `u64` payload length,
//! then the payload: config, tick, taxis, open tasks, completed count, next
//! task id, generator state. Encoding is canonical, so equal worlds produce
//! equal bytes.

use super::world::WorldState;
use super::{GridConfig, Heading, Result, SimError, SimRng, TaskOrder, Taxi};

const MAGIC: &[u8; 4] = b"DWH1";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 8;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("collection fits in u32"));
    }
    fn cell(&mut self, (x, y): (i32, i32)) {
        self.i32(x);
        self.i32(y);
    }
    fn opt_u32(&mut self, v: Option<u32>) {
        match v {
            Some(v) => {
                self.u8(1);
                self.u32(v);
            }
            None => {
                self.u8(0);
                self.u32(0);
            }
        }
    }
    fn opt_u64(&mut self, v: Option<u64>) {
        match v {
            Some(v) => {
                self.u8(1);
                self.u64(v);
            }
            None => {
                self.u8(0);
                self.u64(0);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

fn corrupt(msg: impl Into<String>) -> SimError {
    SimError::CorruptSnapshot(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(corrupt("truncated payload"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(corrupt(format!("bad flag byte {b}"))),
        }
    }
    /// Length prefix, bounded by the bytes left so garbage cannot trigger
    /// huge allocations.
    fn len(&mut self, min_item: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_item) > self.buf.len() {
            return Err(corrupt("length prefix exceeds payload"));
        }
        Ok(n)
    }
    fn cell(&mut self) -> Result<(i32, i32)> {
        Ok((self.i32()?, self.i32()?))
    }
    fn opt_u32(&mut self) -> Result<Option<u32>> {
        let some = self.flag()?;
        let v = self.u32()?;
        Ok(some.then_some(v))
    }
    fn opt_u64(&mut self) -> Result<Option<u64>> {
        let some = self.flag()?;
        let v = self.u64()?;
        Ok(some.then_some(v))
    }
}

impl WorldState {
    pub fn snapshot(&self) -> Vec<u8> {
        let mut p = Writer::default();
        let c = &self.config;
        p.u32(c.width as u32);
        p.u32(c.height as u32);
        p.len(c.pickup_cells.len());
        for &cell in &c.pickup_cells {
            p.cell(cell);
        }
        p.len(c.delivery_cells.len());
        for &(x, y, active) in &c.delivery_cells {
            p.cell((x, y));
            p.u8(active as u8);
        }
        p.u32(c.n_taxis as u32);
        p.u64(c.horizon);
        p.f64(c.task_spawn_prob);
        p.u32(c.max_open_tasks as u32);
        p.u64(c.seed);
        p.opt_u64(c.completion_target);

        p.u64(self.tick);
        p.len(self.taxis.len());
        for t in &self.taxis {
            p.u32(t.id as u32);
            p.cell(t.pos);
            p.u8(t.heading.index());
            p.u8(t.thrust);
            p.opt_u32(t.carrying);
            p.opt_u32(t.assigned_task);
        }
        p.len(self.open_tasks.len());
        for task in &self.open_tasks {
            p.u32(task.id);
            p.cell(task.pickup);
            p.cell(task.delivery);
            p.u64(task.issued_tick);
            p.opt_u64(task.completed_tick);
        }
        p.u64(self.completed_count);
        p.u32(self.next_task_id);
        p.u64(self.rng.seed());
        p.u64(self.rng.counter());

        let mut out = Vec::with_capacity(HEADER_LEN + p.0.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(p.0.len() as u64).to_le_bytes());
        out.extend_from_slice(&p.0);
        out
    }

    pub fn restore(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(corrupt("truncated header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let declared = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
        let payload = &bytes[HEADER_LEN..];
        if declared != payload.len() as u64 {
            return Err(corrupt(format!(
                "payload length {} but header says {declared}",
                payload.len()
            )));
        }
        let mut r = Reader { buf: payload };

        let width = r.u32()? as usize;
        let height = r.u32()? as usize;
        let n = r.len(8)?;
        let pickup_cells = (0..n).map(|_| r.cell()).collect::<Result<Vec<_>>>()?;
        let n = r.len(9)?;
        let mut delivery_cells = Vec::with_capacity(n);
        for _ in 0..n {
            let (x, y) = r.cell()?;
            delivery_cells.push((x, y, r.flag()?));
        }
        let config = GridConfig {
            width,
            height,
            pickup_cells,
            delivery_cells,
            n_taxis: r.u32()? as usize,
            horizon: r.u64()?,
            task_spawn_prob: r.f64()?,
            max_open_tasks: r.u32()? as usize,
            seed: r.u64()?,
            completion_target: r.opt_u64()?,
        };
        config
            .validate()
            .map_err(|e| corrupt(format!("embedded config: {e}")))?;

        let tick = r.u64()?;
        let n = r.len(20)?;
        if n != config.n_taxis {
            return Err(corrupt("taxi count disagrees with config"));
        }
        let mut taxis = Vec::with_capacity(n);
        for _ in 0..n {
            let id = r.u32()? as usize;
            let pos = r.cell()?;
            let heading = Heading::from_index(r.u8()?).ok_or_else(|| corrupt("bad heading"))?;
            let thrust = r.u8()?;
            taxis.push(Taxi {
                id,
                pos,
                heading,
                thrust,
                carrying: r.opt_u32()?,
                assigned_task: r.opt_u32()?,
            });
        }
        let n = r.len(33)?;
        let mut open_tasks = Vec::with_capacity(n);
        for _ in 0..n {
            open_tasks.push(TaskOrder {
                id: r.u32()?,
                pickup: r.cell()?,
                delivery: r.cell()?,
                issued_tick: r.u64()?,
                completed_tick: r.opt_u64()?,
            });
        }
        let completed_count = r.u64()?;
        let next_task_id = r.u32()?;
        let rng = SimRng::from_parts(r.u64()?, r.u64()?);
        if !r.buf.is_empty() {
            return Err(corrupt("trailing bytes"));
        }

        let mut world = WorldState::build(config);
        for t in &taxis {
            if !world.in_bounds(t.pos) {
                return Err(corrupt(format!("taxi {} out of bounds", t.id)));
            }
        }
        world.occupancy.iter_mut().for_each(|o| *o = 0);
        for t in &taxis {
            let idx = t.pos.1 as usize * world.config.width + t.pos.0 as usize;
            if world.occupancy[idx] != 0 {
                return Err(corrupt("two taxis share a cell"));
            }
            world.occupancy[idx] = t.id as u32 + 1;
        }
        world.taxis = taxis;
        world.open_tasks = open_tasks;
        world.tick = tick;
        world.completed_count = completed_count;
        world.next_task_id = next_task_id;
        world.rng = rng;
        world.check_invariants().map_err(corrupt)?;
        Ok(world)
    }
}
