use super::AgentError;
use crate::linalg::Matrix;
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// True only for terminal transitions. Time-limit truncation still
    /// bootstraps.
    pub done: bool,
}

/// A sampled minibatch in struct-of-arrays form.
#[derive(Debug, Clone)]
pub struct DqnBatch {
    pub obs: Matrix,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_obs: Matrix,
    pub dones: Vec<bool>,
}

impl DqnBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn from_transitions(ts: &[Transition]) -> Result<Self, AgentError> {
        let dim = ts.first().ok_or(AgentError::EmptyBuffer)?.obs.len();
        let mut obs = Vec::with_capacity(ts.len() * dim);
        let mut next = Vec::with_capacity(ts.len() * dim);
        for t in ts {
            if t.obs.len() != dim || t.next_obs.len() != dim {
                return Err(AgentError::LengthMismatch {
                    what: "observation",
                    expected: dim,
                    got: t.obs.len().max(t.next_obs.len()),
                });
            }
            obs.extend_from_slice(&t.obs);
            next.extend_from_slice(&t.next_obs);
        }
        let shape = |data| Matrix::new(ts.len(), dim, data).map_err(|_| AgentError::NonFinite { what: "observation" });
        Ok(Self {
            obs: shape(obs)?,
            actions: ts.iter().map(|t| t.action).collect(),
            rewards: ts.iter().map(|t| t.reward).collect(),
            next_obs: shape(next)?,
            dones: ts.iter().map(|t| t.done).collect(),
        })
    }
}

/// Fixed-capacity ring buffer with flat observation storage.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    obs: Vec<f64>,
    next_obs: Vec<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    cursor: usize,
    size: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize) -> Self {
        let capacity = capacity.max(1);
        Self {
            capacity,
            obs_dim,
            obs: vec![0.0; capacity * obs_dim],
            next_obs: vec![0.0; capacity * obs_dim],
            actions: vec![0; capacity],
            rewards: vec![0.0; capacity],
            dones: vec![false; capacity],
            cursor: 0,
            size: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: &Transition) -> Result<(), AgentError> {
        for (what, v) in [("obs", &t.obs), ("next_obs", &t.next_obs)] {
            if v.len() != self.obs_dim {
                return Err(AgentError::LengthMismatch {
                    what,
                    expected: self.obs_dim,
                    got: v.len(),
                });
            }
        }
        if !t.reward.is_finite() {
            return Err(AgentError::NonFinite { what: "reward" });
        }
        let i = self.cursor;
        let span = i * self.obs_dim..(i + 1) * self.obs_dim;
        self.obs[span.clone()].copy_from_slice(&t.obs);
        self.next_obs[span].copy_from_slice(&t.next_obs);
        self.actions[i] = t.action;
        self.rewards[i] = t.reward;
        self.dones[i] = t.done;
        self.cursor = (self.cursor + 1) % self.capacity;
        self.size = (self.size + 1).min(self.capacity);
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<Transition> {
        (i < self.size).then(|| {
            let span = i * self.obs_dim..(i + 1) * self.obs_dim;
            Transition {
                obs: self.obs[span.clone()].to_vec(),
                action: self.actions[i],
                reward: self.rewards[i],
                next_obs: self.next_obs[span].to_vec(),
                done: self.dones[i],
            }
        })
    }

    /// Uniform sampling with replacement over filled slots.
    pub fn sample_indices(&self, n: usize, rng: &mut SeededRng) -> Result<Vec<usize>, AgentError> {
        if self.size == 0 {
            return Err(AgentError::EmptyBuffer);
        }
        Ok((0..n).map(|_| rng.below(self.size)).collect())
    }

    pub fn sample(&self, n: usize, rng: &mut SeededRng) -> Result<DqnBatch, AgentError> {
        let idx = self.sample_indices(n, rng)?;
        let d = self.obs_dim;
        let mut obs = Vec::with_capacity(n * d);
        let mut next = Vec::with_capacity(n * d);
        for &i in &idx {
            obs.extend_from_slice(&self.obs[i * d..(i + 1) * d]);
            next.extend_from_slice(&self.next_obs[i * d..(i + 1) * d]);
        }
        Ok(DqnBatch {
            obs: Matrix::from_vec_unchecked(n, d, obs),
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            next_obs: Matrix::from_vec_unchecked(n, d, next),
            dones: idx.iter().map(|&i| self.dones[i]).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(i: usize) -> Transition {
        Transition {
            obs: vec![i as f64, 0.0],
            action: i % 2,
            reward: i as f64,
            next_obs: vec![i as f64 + 1.0, 0.0],
            done: i % 3 == 0,
        }
    }

    #[test]
    fn ring_wraps_and_caps_size() {
        let mut buf = ReplayBuffer::new(3, 2);
        assert!(buf.sample(4, &mut SeededRng::new(0)).is_err());
        for i in 0..5 {
            buf.push(&t(i)).unwrap();
            assert!(buf.len() <= buf.capacity());
        }
        assert_eq!(buf.len(), 3);
        // Slots 0 and 1 were overwritten by transitions 3 and 4.
        assert_eq!(buf.get(0).unwrap(), t(3));
        assert_eq!(buf.get(1).unwrap(), t(4));
        assert_eq!(buf.get(2).unwrap(), t(2));
        assert!(buf.get(3).is_none());
    }

    #[test]
    fn sampling_only_touches_filled_slots() {
        let mut buf = ReplayBuffer::new(100, 2);
        for i in 0..7 {
            buf.push(&t(i)).unwrap();
        }
        let mut rng = SeededRng::new(3);
        let idx = buf.sample_indices(5000, &mut rng).unwrap();
        assert!(idx.iter().all(|&i| i < 7));
        let batch = buf.sample(64, &mut rng).unwrap();
        for r in 0..64 {
            let i = batch.obs.get(r, 0) as usize;
            assert_eq!(batch.rewards[r], i as f64);
            assert_eq!(batch.next_obs.get(r, 0), i as f64 + 1.0);
            assert_eq!(batch.dones[r], i % 3 == 0);
        }
    }

    #[test]
    fn rejects_bad_transitions() {
        let mut buf = ReplayBuffer::new(4, 3);
        assert!(matches!(buf.push(&t(0)), Err(AgentError::LengthMismatch { .. })));
        let mut bad = t(0);
        bad.obs.push(0.0);
        bad.next_obs.push(0.0);
        bad.reward = f64::NAN;
        assert!(matches!(buf.push(&bad), Err(AgentError::NonFinite { .. })));
    }
}
