use ndarray::{Array1, Array2};
use rand::Rng;

use crate::env::Transition;

/// Fixed-capacity ring of transitions; once full, the oldest entry is
/// overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    dones: Vec<bool>,
    len: usize,
    cursor: usize,
}

/// A sampled minibatch, one row per transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub dones: Vec<bool>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            state_dim,
            action_dim,
            states: vec![0.0; capacity * state_dim],
            actions: vec![0.0; capacity * action_dim],
            rewards: vec![0.0; capacity],
            next_states: vec![0.0; capacity * state_dim],
            dones: vec![false; capacity],
            len: 0,
            cursor: 0,
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

    pub fn push(&mut self, state: &[f64], action: &[f64], reward: f64, next_state: &[f64], done: bool) {
        assert_eq!(state.len(), self.state_dim);
        assert_eq!(next_state.len(), self.state_dim);
        assert_eq!(action.len(), self.action_dim);
        let i = self.cursor;
        let (sd, ad) = (self.state_dim, self.action_dim);
        self.states[i * sd..(i + 1) * sd].copy_from_slice(state);
        self.actions[i * ad..(i + 1) * ad].copy_from_slice(action);
        self.rewards[i] = reward;
        self.next_states[i * sd..(i + 1) * sd].copy_from_slice(next_state);
        self.dones[i] = done;
        self.cursor = (self.cursor + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
    }

    pub fn push_transition(&mut self, t: &Transition) {
        self.push(&t.state, &t.action, t.reward, &t.next_state, t.done);
    }

    /// Transition at storage slot `i` (`i < len`).
    pub fn get(&self, i: usize) -> Transition {
        assert!(i < self.len, "slot {i} is not filled");
        let (sd, ad) = (self.state_dim, self.action_dim);
        Transition {
            state: self.states[i * sd..(i + 1) * sd].to_vec(),
            action: self.actions[i * ad..(i + 1) * ad].to_vec(),
            reward: self.rewards[i],
            next_state: self.next_states[i * sd..(i + 1) * sd].to_vec(),
            done: self.dones[i],
        }
    }

    /// Uniform sample with replacement from the filled region.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Batch {
        assert!(self.len > 0, "cannot sample an empty buffer");
        let idx: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..self.len)).collect();
        self.gather(&idx)
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        let (sd, ad) = (self.state_dim, self.action_dim);
        let n = idx.len();
        let mut states = Array2::zeros((n, sd));
        let mut actions = Array2::zeros((n, ad));
        let mut next_states = Array2::zeros((n, sd));
        let mut rewards = Array1::zeros(n);
        let mut dones = Vec::with_capacity(n);
        for (row, &i) in idx.iter().enumerate() {
            states.row_mut(row).assign(&ndarray::ArrayView1::from(&self.states[i * sd..(i + 1) * sd]));
            actions.row_mut(row).assign(&ndarray::ArrayView1::from(&self.actions[i * ad..(i + 1) * ad]));
            next_states.row_mut(row).assign(&ndarray::ArrayView1::from(&self.next_states[i * sd..(i + 1) * sd]));
            rewards[row] = self.rewards[i];
            dones.push(self.dones[i]);
        }
        Batch { states, actions, rewards, next_states, dones }
    }
}
