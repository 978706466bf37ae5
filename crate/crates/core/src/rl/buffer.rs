use std::collections::{HashSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    /// Legal actions in `state`.
    pub legal: Vec<usize>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Legal actions in the successor state.
    pub next_legal: Vec<usize>,
    pub terminal: bool,
}

/// FIFO replay buffer that refuses a second transition with the same
/// (state key, action).
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<((String, usize), Transition)>,
    keys: HashSet<(String, usize)>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            keys: HashSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn contains(&self, key: &str, action: usize) -> bool {
        self.keys.contains(&(key.to_string(), action))
    }

    /// Returns false for a duplicate key or a zero-capacity buffer.
    pub fn push(&mut self, key: String, t: Transition) -> bool {
        if self.capacity == 0 {
            return false;
        }
        let k = (key, t.action);
        if self.keys.contains(&k) {
            return false;
        }
        if self.items.len() == self.capacity {
            if let Some((old, _)) = self.items.pop_front() {
                self.keys.remove(&old);
            }
        }
        self.keys.insert(k.clone());
        self.items.push_back((k, t));
        true
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| &self.items[rng.random_range(0..self.items.len())].1).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter().map(|(_, t)| t)
    }
}
