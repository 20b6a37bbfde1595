//! Per-task ring buffers with exactly balanced batch sampling.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::serialize::{ByteReader, ByteWriter};
use crate::nn::Matrix;

pub const BUF_MAGIC: &[u8; 7] = b"MTRLBUF";
pub const BUF_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// Termination only; horizon truncation is stored as `false`.
    pub done: bool,
    pub task_id: usize,
}

/// Ring of transitions for one task, stored column-flat.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBuffer {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    obs: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_obs: Vec<f64>,
    dones: Vec<bool>,
    len: usize,
    write_index: usize,
    pushed: u64,
}

impl TaskBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Self {
        Self {
            capacity,
            obs_dim,
            act_dim,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_obs: Vec::new(),
            dones: Vec::new(),
            len: 0,
            write_index: 0,
            pushed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    fn push(&mut self, r: &TransitionRecord) {
        let i = self.write_index;
        if self.len < self.capacity {
            self.obs.extend_from_slice(&r.obs);
            self.actions.extend_from_slice(&r.action);
            self.rewards.push(r.reward);
            self.next_obs.extend_from_slice(&r.next_obs);
            self.dones.push(r.done);
            self.len += 1;
        } else {
            let (o, a) = (self.obs_dim, self.act_dim);
            self.obs[i * o..(i + 1) * o].copy_from_slice(&r.obs);
            self.actions[i * a..(i + 1) * a].copy_from_slice(&r.action);
            self.rewards[i] = r.reward;
            self.next_obs[i * o..(i + 1) * o].copy_from_slice(&r.next_obs);
            self.dones[i] = r.done;
        }
        self.write_index = (i + 1) % self.capacity;
        self.pushed += 1;
    }

    /// Record at physical slot `i`.
    pub fn get(&self, i: usize, task_id: usize) -> TransitionRecord {
        let (o, a) = (self.obs_dim, self.act_dim);
        TransitionRecord {
            obs: self.obs[i * o..(i + 1) * o].to_vec(),
            action: self.actions[i * a..(i + 1) * a].to_vec(),
            reward: self.rewards[i],
            next_obs: self.next_obs[i * o..(i + 1) * o].to_vec(),
            done: self.dones[i],
            task_id,
        }
    }

    /// Physical slots from oldest to newest.
    pub fn slots_in_order(&self) -> Vec<usize> {
        if self.len < self.capacity {
            (0..self.len).collect()
        } else {
            (0..self.capacity)
                .map(|k| (self.write_index + k) % self.capacity)
                .collect()
        }
    }
}

/// Materialized training batch, rows aligned across fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_obs: Matrix,
    pub dones: Vec<bool>,
    pub task_ids: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn from_records(records: &[TransitionRecord]) -> Result<Self> {
        let obs = Matrix::from_rows(&records.iter().map(|r| r.obs.as_slice()).collect::<Vec<_>>())?;
        let actions = Matrix::from_rows(
            &records
                .iter()
                .map(|r| r.action.as_slice())
                .collect::<Vec<_>>(),
        )?;
        let next_obs = Matrix::from_rows(
            &records
                .iter()
                .map(|r| r.next_obs.as_slice())
                .collect::<Vec<_>>(),
        )?;
        Ok(Self {
            obs,
            actions,
            rewards: records.iter().map(|r| r.reward).collect(),
            next_obs,
            dones: records.iter().map(|r| r.done).collect(),
            task_ids: records.iter().map(|r| r.task_id).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayStore {
    buffers: Vec<TaskBuffer>,
    obs_dim: usize,
    act_dim: usize,
}

impl ReplayStore {
    pub fn new(n_tasks: usize, capacity: usize, obs_dim: usize, act_dim: usize) -> Result<Self> {
        if n_tasks == 0 || capacity == 0 {
            return Err(Error::Config(
                "replay needs ≥ 1 task and capacity ≥ 1".into(),
            ));
        }
        Ok(Self {
            buffers: (0..n_tasks)
                .map(|_| TaskBuffer::new(capacity, obs_dim, act_dim))
                .collect(),
            obs_dim,
            act_dim,
        })
    }

    pub fn n_tasks(&self) -> usize {
        self.buffers.len()
    }

    pub fn buffer(&self, task_id: usize) -> &TaskBuffer {
        &self.buffers[task_id]
    }

    pub fn push(&mut self, record: TransitionRecord) -> Result<()> {
        if record.task_id >= self.buffers.len() {
            return Err(Error::Contract(format!(
                "task {} outside 0..{}",
                record.task_id,
                self.buffers.len()
            )));
        }
        if record.obs.len() != self.obs_dim
            || record.next_obs.len() != self.obs_dim
            || record.action.len() != self.act_dim
        {
            return Err(Error::Shape(
                "transition dimensions do not match the store".into(),
            ));
        }
        self.buffers[record.task_id].push(&record);
        Ok(())
    }

    /// True when every task holds at least `min_per_task` records.
    pub fn all_hold(&self, min_per_task: usize) -> bool {
        self.buffers.iter().all(|b| b.len() >= min_per_task)
    }

    fn sample_slots<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<(usize, usize)>> {
        let n = self.buffers.len();
        if batch_size == 0 || !batch_size.is_multiple_of(n) {
            return Err(Error::NotReady(format!(
                "batch size {batch_size} is not a positive multiple of {n} tasks"
            )));
        }
        let per_task = batch_size / n;
        if !self.all_hold(per_task) {
            return Err(Error::NotReady(format!(
                "some task buffer holds fewer than {per_task} records"
            )));
        }
        let mut slots = Vec::with_capacity(batch_size);
        for (t, b) in self.buffers.iter().enumerate() {
            for _ in 0..per_task {
                slots.push((t, rng.random_range(0..b.len())));
            }
        }
        slots.shuffle(rng);
        Ok(slots)
    }

    /// Exactly `batch_size / n_tasks` records per task, uniform with
    /// replacement within each task, in shuffled order.
    pub fn sample_balanced<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<TransitionRecord>> {
        Ok(self
            .sample_slots(batch_size, rng)?
            .into_iter()
            .map(|(t, i)| self.buffers[t].get(i, t))
            .collect())
    }

    /// Same draw as [`ReplayStore::sample_balanced`], laid out as matrices.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        let slots = self.sample_slots(batch_size, rng)?;
        let (o, a) = (self.obs_dim, self.act_dim);
        let mut obs = Matrix::zeros(batch_size, o);
        let mut actions = Matrix::zeros(batch_size, a);
        let mut next_obs = Matrix::zeros(batch_size, o);
        let mut rewards = Vec::with_capacity(batch_size);
        let mut dones = Vec::with_capacity(batch_size);
        let mut task_ids = Vec::with_capacity(batch_size);
        for (row, &(t, i)) in slots.iter().enumerate() {
            let b = &self.buffers[t];
            obs.row_mut(row).copy_from_slice(&b.obs[i * o..(i + 1) * o]);
            actions
                .row_mut(row)
                .copy_from_slice(&b.actions[i * a..(i + 1) * a]);
            next_obs
                .row_mut(row)
                .copy_from_slice(&b.next_obs[i * o..(i + 1) * o]);
            rewards.push(b.rewards[i]);
            dones.push(b.dones[i]);
            task_ids.push(t);
        }
        Ok(Batch {
            obs,
            actions,
            rewards,
            next_obs,
            dones,
            task_ids,
        })
    }

    /// Serializes every buffer, including ring position, for resumable runs.
    pub fn dump(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(BUF_MAGIC);
        w.u8(BUF_VERSION);
        w.u32(self.buffers.len() as u32);
        w.u32(self.obs_dim as u32);
        w.u32(self.act_dim as u32);
        for b in &self.buffers {
            w.u64(b.capacity as u64);
            w.u64(b.len as u64);
            w.u64(b.write_index as u64);
            w.u64(b.pushed);
            w.f64s(&b.obs);
            w.f64s(&b.actions);
            w.f64s(&b.rewards);
            w.f64s(&b.next_obs);
            w.bytes(&b.dones.iter().map(|&d| d as u8).collect::<Vec<_>>());
        }
        w.finish()
    }

    pub fn load(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(BUF_MAGIC, BUF_VERSION)?;
        let n = r.u32()? as usize;
        let obs_dim = r.u32()? as usize;
        let act_dim = r.u32()? as usize;
        let mut buffers = Vec::with_capacity(n);
        for _ in 0..n {
            let capacity = r.u64()? as usize;
            let len = r.u64()? as usize;
            let write_index = r.u64()? as usize;
            let pushed = r.u64()?;
            if len > capacity || write_index >= capacity.max(1) {
                return Err(Error::Format("inconsistent ring header".into()));
            }
            let obs = r.f64s(len * obs_dim)?;
            let actions = r.f64s(len * act_dim)?;
            let rewards = r.f64s(len)?;
            let next_obs = r.f64s(len * obs_dim)?;
            let dones = r.take(len)?.iter().map(|&b| b != 0).collect();
            buffers.push(TaskBuffer {
                capacity,
                obs_dim,
                act_dim,
                obs,
                actions,
                rewards,
                next_obs,
                dones,
                len,
                write_index,
                pushed,
            });
        }
        r.finish()?;
        Ok(Self {
            buffers,
            obs_dim,
            act_dim,
        })
    }
}
