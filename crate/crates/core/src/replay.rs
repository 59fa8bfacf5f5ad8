//! Shared FIFO replay buffer with uniform with-replacement sampling.
//!
//! Intrinsic rewards are not stored: each record keeps the cells agents
//! landed on so rewards can be recomputed against the current visit counts.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::env::Pos;
use crate::error::{Error, Result};
use crate::nn::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionRecord {
    pub state: Vec<f32>,
    pub next_state: Vec<f32>,
    pub obs: Vec<Vec<f32>>,
    pub next_obs: Vec<Vec<f32>>,
    pub actions: Vec<usize>,
    pub extrinsic_reward: f64,
    /// Terminal transition; bootstrapping is masked.
    pub done: bool,
    pub next_cells: Vec<Pos>,
}

/// Column-major minibatch.
#[derive(Clone, Debug)]
pub struct Batch<F: Scalar> {
    pub indices: Vec<usize>,
    pub states: Array2<F>,
    pub next_states: Array2<F>,
    /// Per agent, `(batch, obs_dim)`.
    pub obs: Vec<Array2<F>>,
    pub next_obs: Vec<Array2<F>>,
    /// Per agent, one action index per row.
    pub actions: Vec<Vec<usize>>,
    pub rewards: Array1<F>,
    /// 1 for terminal rows, 0 otherwise.
    pub dones: Array1<F>,
    /// Per agent, the cell reached.
    pub next_cells: Vec<Vec<Pos>>,
}

impl<F: Scalar> Batch<F> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.obs.len()
    }

    /// Row-wise stacking of explicit records, bypassing any buffer.
    pub fn from_records(records: &[TransitionRecord]) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::Usage("cannot batch zero records".into()))?;
        let n = first.obs.len();
        let (sd, od) = (first.state.len(), first.obs[0].len());
        for r in records {
            if r.state.len() != sd
                || r.next_state.len() != sd
                || r.obs.len() != n
                || r.next_obs.len() != n
                || r.actions.len() != n
                || r.next_cells.len() != n
                || r.obs.iter().chain(&r.next_obs).any(|o| o.len() != od)
            {
                return Err(Error::Shape("records disagree on dimensions".into()));
            }
        }
        let b = records.len();
        let rows = |f: &dyn Fn(&TransitionRecord) -> &[f32], width: usize| {
            Array2::from_shape_fn((b, width), |(r, c)| F::lit(f(&records[r])[c] as f64))
        };
        Ok(Batch {
            indices: (0..b).collect(),
            states: rows(&|r| &r.state, sd),
            next_states: rows(&|r| &r.next_state, sd),
            obs: (0..n).map(|i| rows(&|r| &r.obs[i], od)).collect(),
            next_obs: (0..n).map(|i| rows(&|r| &r.next_obs[i], od)).collect(),
            actions: (0..n)
                .map(|i| records.iter().map(|r| r.actions[i]).collect())
                .collect(),
            rewards: records.iter().map(|r| F::lit(r.extrinsic_reward)).collect(),
            dones: records
                .iter()
                .map(|r| if r.done { F::one() } else { F::zero() })
                .collect(),
            next_cells: (0..n)
                .map(|i| records.iter().map(|r| r.next_cells[i]).collect())
                .collect(),
        })
    }
}

/// Ring buffer storing each field in one flat column.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    n_agents: usize,
    state_dim: usize,
    obs_dim: usize,
    len: usize,
    /// Physical slot written next.
    head: usize,
    states: Vec<f32>,
    next_states: Vec<f32>,
    obs: Vec<f32>,
    next_obs: Vec<f32>,
    actions: Vec<u8>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    next_cells: Vec<Pos>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, n_agents: usize, state_dim: usize, obs_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            n_agents,
            state_dim,
            obs_dim,
            len: 0,
            head: 0,
            states: Vec::new(),
            next_states: Vec::new(),
            obs: Vec::new(),
            next_obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
            next_cells: Vec::new(),
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

    fn check(&self, r: &TransitionRecord) -> Result<()> {
        let n = self.n_agents;
        let ok = r.state.len() == self.state_dim
            && r.next_state.len() == self.state_dim
            && r.obs.len() == n
            && r.next_obs.len() == n
            && r.obs
                .iter()
                .chain(&r.next_obs)
                .all(|o| o.len() == self.obs_dim)
            && r.actions.len() == n
            && r.actions.iter().all(|&a| a <= u8::MAX as usize)
            && r.next_cells.len() == n;
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(
                "transition does not match the buffer's dimensions".into(),
            ))
        }
    }

    /// Appends a record, evicting the oldest one when full.
    pub fn push(&mut self, r: &TransitionRecord) -> Result<()> {
        self.check(r)?;
        if self.len < self.capacity {
            self.states.extend_from_slice(&r.state);
            self.next_states.extend_from_slice(&r.next_state);
            for o in &r.obs {
                self.obs.extend_from_slice(o);
            }
            for o in &r.next_obs {
                self.next_obs.extend_from_slice(o);
            }
            self.actions.extend(r.actions.iter().map(|&a| a as u8));
            self.rewards.push(r.extrinsic_reward);
            self.dones.push(r.done);
            self.next_cells.extend_from_slice(&r.next_cells);
            self.len += 1;
        } else {
            let slot = self.head;
            let (sd, od, n) = (self.state_dim, self.obs_dim, self.n_agents);
            self.states[slot * sd..(slot + 1) * sd].copy_from_slice(&r.state);
            self.next_states[slot * sd..(slot + 1) * sd].copy_from_slice(&r.next_state);
            for i in 0..n {
                let at = (slot * n + i) * od;
                self.obs[at..at + od].copy_from_slice(&r.obs[i]);
                self.next_obs[at..at + od].copy_from_slice(&r.next_obs[i]);
                self.actions[slot * n + i] = r.actions[i] as u8;
                self.next_cells[slot * n + i] = r.next_cells[i];
            }
            self.rewards[slot] = r.extrinsic_reward;
            self.dones[slot] = r.done;
        }
        self.head = (self.head + 1) % self.capacity;
        Ok(())
    }

    /// Physical slot of the `i`-th oldest record.
    fn slot(&self, i: usize) -> usize {
        if self.len < self.capacity {
            i
        } else {
            (self.head + i) % self.capacity
        }
    }

    /// The `i`-th oldest record.
    pub fn get(&self, i: usize) -> Option<TransitionRecord> {
        if i >= self.len {
            return None;
        }
        let s = self.slot(i);
        let (sd, od, n) = (self.state_dim, self.obs_dim, self.n_agents);
        let agent = |col: &[f32], a: usize| col[(s * n + a) * od..(s * n + a + 1) * od].to_vec();
        Some(TransitionRecord {
            state: self.states[s * sd..(s + 1) * sd].to_vec(),
            next_state: self.next_states[s * sd..(s + 1) * sd].to_vec(),
            obs: (0..n).map(|a| agent(&self.obs, a)).collect(),
            next_obs: (0..n).map(|a| agent(&self.next_obs, a)).collect(),
            actions: (0..n).map(|a| self.actions[s * n + a] as usize).collect(),
            extrinsic_reward: self.rewards[s],
            done: self.dones[s],
            next_cells: self.next_cells[s * n..(s + 1) * n].to_vec(),
        })
    }

    /// Uniform draws of logical indices, with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<usize> {
        (0..batch_size)
            .map(|_| rng.random_range(0..self.len))
            .collect()
    }

    /// Uniform minibatch, or `None` while fewer than `batch_size` records are stored.
    pub fn sample<F: Scalar, R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Option<Batch<F>> {
        if batch_size == 0 || self.len < batch_size {
            return None;
        }
        let indices = self.sample_indices(batch_size, rng);
        Some(self.gather(indices))
    }

    pub fn gather<F: Scalar>(&self, indices: Vec<usize>) -> Batch<F> {
        let b = indices.len();
        let (sd, od, n) = (self.state_dim, self.obs_dim, self.n_agents);
        let slots: Vec<usize> = indices.iter().map(|&i| self.slot(i)).collect();
        let cast = |v: f32| F::lit(v as f64);
        let state_rows =
            |col: &[f32]| Array2::from_shape_fn((b, sd), |(r, c)| cast(col[slots[r] * sd + c]));
        let obs_rows = |col: &[f32], a: usize| {
            Array2::from_shape_fn((b, od), |(r, c)| cast(col[(slots[r] * n + a) * od + c]))
        };
        Batch {
            states: state_rows(&self.states),
            next_states: state_rows(&self.next_states),
            obs: (0..n).map(|a| obs_rows(&self.obs, a)).collect(),
            next_obs: (0..n).map(|a| obs_rows(&self.next_obs, a)).collect(),
            actions: (0..n)
                .map(|a| {
                    slots
                        .iter()
                        .map(|&s| self.actions[s * n + a] as usize)
                        .collect()
                })
                .collect(),
            rewards: slots.iter().map(|&s| F::lit(self.rewards[s])).collect(),
            dones: slots
                .iter()
                .map(|&s| if self.dones[s] { F::one() } else { F::zero() })
                .collect(),
            next_cells: (0..n)
                .map(|a| slots.iter().map(|&s| self.next_cells[s * n + a]).collect())
                .collect(),
            indices,
        }
    }
}
