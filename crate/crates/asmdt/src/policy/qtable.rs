use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{greedy_action, Policy};
use crate::error::{Error, Result};
use crate::power::PowerModel;
use crate::sim::reward::RewardWeights;
use crate::sim::{Action, Observation, SimConfig, Simulator};
use crate::traffic::ArrivalStream;

pub const LOAD_BINS: u32 = 10;

/// Load bin of the last tick and the previous action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateKey {
    pub load_bin: u32,
    pub prev_action: Action,
}

impl StateKey {
    pub fn from_observation(obs: &Observation) -> Self {
        let frac = obs.snapshot.l_c as f64 / obs.l_max as f64;
        Self {
            load_bin: ((frac * LOAD_BINS as f64) as u32).min(LOAD_BINS - 1),
            prev_action: obs.prev_action,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    values: HashMap<StateKey, [f64; 3]>,
    pub learning_rate: f64,
    pub discount: f64,
}

impl QTable {
    pub fn new(learning_rate: f64, discount: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate <= 1.0 && discount > 0.0 && discount <= 1.0) {
            return Err(Error::InvalidParameter("learning rate and discount must lie in (0, 1]".into()));
        }
        Ok(Self {
            values: HashMap::new(),
            learning_rate,
            discount,
        })
    }

    pub fn values(&self, s: &StateKey) -> [f64; 3] {
        self.values.get(s).copied().unwrap_or([0.0; 3])
    }

    pub fn set(&mut self, s: StateKey, a: Action, v: f64) {
        self.values.entry(s).or_insert([0.0; 3])[a.index()] = v;
    }

    /// One temporal-difference step toward `reward + discount * max Q(s')`.
    pub fn update(&mut self, s: StateKey, a: Action, reward: f64, next: StateKey) -> f64 {
        let next_best = self.values(&next).into_iter().fold(f64::NEG_INFINITY, f64::max);
        let lr = self.learning_rate;
        let gamma = self.discount;
        let q = &mut self.values.entry(s).or_insert([0.0; 3])[a.index()];
        *q += lr * (reward + gamma * next_best - *q);
        *q
    }

    /// Same update with the discount set to zero and an explicit step size.
    pub fn update_immediate(&mut self, s: StateKey, a: Action, reward: f64, step: f64) -> f64 {
        let q = &mut self.values.entry(s).or_insert([0.0; 3])[a.index()];
        *q += step * (reward - *q);
        *q
    }

    pub fn act(&self, s: &StateKey) -> Action {
        greedy_action(&self.values(s))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QTrainConfig {
    pub learning_rate: f64,
    pub discount: f64,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub seed: u64,
}

impl Default for QTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            discount: 0.9,
            episodes: 300,
            steps_per_episode: 100,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            seed: 0,
        }
    }
}

/// Epsilon-greedy tabular Q-learning on the simulator, restarting the
/// stream whenever it is exhausted.
pub fn train_q_table(
    stream: &ArrivalStream,
    model: &PowerModel,
    weights: &RewardWeights,
    sim_config: &SimConfig,
    cfg: &QTrainConfig,
) -> Result<QTable> {
    let mut table = QTable::new(cfg.learning_rate, cfg.discount)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let quiet = SimConfig { record_rewards: false, ..sim_config.clone() };
    let mut sim = Simulator::new(stream, model, weights, &quiet)?;
    let decay_steps = (cfg.episodes * cfg.steps_per_episode / 2).max(1) as f64;
    let mut step = 0usize;
    for _ in 0..cfg.episodes {
        for _ in 0..cfg.steps_per_episode {
            if sim.is_done() {
                sim = Simulator::new(stream, model, weights, &quiet)?;
            }
            let frac = (step as f64 / decay_steps).min(1.0);
            let eps = cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac;
            let s = StateKey::from_observation(&sim.observe());
            let a = if rng.random::<f64>() < eps {
                Action::ALL[rng.random_range(0..3)]
            } else {
                table.act(&s)
            };
            let out = sim.step(a);
            let next = StateKey::from_observation(&sim.observe());
            table.update(s, a, out.reward, next);
            step += 1;
        }
    }
    Ok(table)
}

pub struct QPolicy {
    pub table: QTable,
}

impl Policy for QPolicy {
    fn name(&self) -> String {
        "q_table".into()
    }
    fn act(&mut self, obs: &Observation) -> Action {
        self.table.act(&StateKey::from_observation(obs))
    }
}
