use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::sim::Action;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Windowed reward every action would have earned from `state`.
    pub action_rewards: [f64; 3],
    /// First experience after the simulator was (re)started.
    #[serde(default)]
    pub episode_start: bool,
}

/// Ring buffer of experiences in arrival order.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    items: VecDeque<Experience>,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
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

    pub fn get(&self, i: usize) -> &Experience {
        &self.items[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }

    /// Uniform start index of a run of `batch` consecutive experiences.
    pub fn sample_start(&self, batch: usize, rng: &mut impl Rng) -> Option<usize> {
        if batch == 0 || self.items.len() < batch {
            return None;
        }
        Some(rng.random_range(0..=self.items.len() - batch))
    }

    /// Per-action share of experiences with a non-zero reward, floored so
    /// every weight stays positive.
    pub fn action_weights(&self) -> [f64; 3] {
        let n = self.items.len().max(1) as f64;
        let mut w = [0.0; 3];
        for e in &self.items {
            for a in 0..3 {
                if e.action_rewards[a] != 0.0 {
                    w[a] += 1.0;
                }
            }
        }
        w.map(|c| (c / n).max(1e-3))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exp(r: f64) -> Experience {
        Experience {
            state: vec![r],
            action: Action::Fm,
            reward: r,
            next_state: vec![r],
            action_rewards: [r, 0.0, 1.0],
            episode_start: false,
        }
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut m = ReplayMemory::new(3);
        for k in 0..5 {
            m.push(exp(k as f64));
        }
        assert_eq!(m.len(), 3);
        assert_eq!(m.get(0).reward, 2.0);
    }

    #[test]
    fn every_start_reachable() {
        let mut m = ReplayMemory::new(10);
        for k in 0..10 {
            m.push(exp(k as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = [false; 7];
        for _ in 0..500 {
            seen[m.sample_start(4, &mut rng).unwrap()] = true;
        }
        assert!(seen.iter().all(|&s| s));
        assert!(m.sample_start(11, &mut rng).is_none());
    }

    #[test]
    fn weights_positive() {
        let mut m = ReplayMemory::new(4);
        m.push(exp(0.0));
        m.push(exp(1.0));
        assert_eq!(m.action_weights(), [0.5, 1e-3, 1.0]);
    }
}
