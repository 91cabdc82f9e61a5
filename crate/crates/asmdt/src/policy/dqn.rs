//! Replay-trained recurrent deep-Q agent.
//!
//! The agent is trained toward the windowed reward of every action at each
//! decision epoch, squashed into [0, 1] and scored with a weighted binary
//! cross-entropy on the sigmoid of the action values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::lstm::{LstmState, QNetwork, ACTIONS};
use super::replay::{Experience, ReplayMemory};
use super::{greedy_action, Policy};
use crate::error::{Error, Result};
use crate::power::PowerModel;
use crate::sim::reward::RewardWeights;
use crate::sim::{Action, Observation, SimConfig, Simulator};
use crate::traffic::ArrivalStream;

pub const FEATURES: usize = 7;

/// Ticks at which the log-scale time-since-arrival feature saturates.
const ARRIVAL_HORIZON_TICKS: f64 = 1.4e6;

/// Ticks at which the linear time-since-arrival feature saturates; fine
/// enough to place the next arrival against the 14 and 140 tick windows.
const ARRIVAL_NEAR_TICKS: f64 = 700.0;

/// State vector: last-tick load, time since the last arrival on a linear
/// and on a log scale, arrivals since the previous epoch, and the previous
/// action one-hot.
pub fn encode(obs: &Observation) -> Vec<f64> {
    let mut x = vec![0.0; FEATURES];
    x[0] = obs.snapshot.l_c as f64 / obs.l_max as f64;
    x[1] = obs.ticks_since_arrival.map_or(1.0, |t| (t as f64 / ARRIVAL_NEAR_TICKS).min(1.0));
    x[2] = match obs.ticks_since_arrival {
        Some(t) => ((1.0 + t as f64).ln() / (1.0 + ARRIVAL_HORIZON_TICKS).ln()).min(1.0),
        None => 1.0,
    };
    x[3] = (obs.arrivals_since_epoch as f64 / 4.0).min(1.0);
    x[4 + obs.prev_action.index()] = 1.0;
    x
}

/// Maps a windowed reward from [-1, 1] onto a [0, 1] target.
pub fn normalize_reward(r: f64) -> f64 {
    ((r + 1.0) / 2.0).clamp(0.0, 1.0)
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Weighted binary cross-entropy between sigmoid action values and reward
/// targets, averaged over actions and batch. Returns the loss and its
/// gradient with respect to the action values.
pub fn dqn_loss(
    q: &[[f64; ACTIONS]],
    targets: &[[f64; ACTIONS]],
    action_weights: &[f64; ACTIONS],
    batch_weights: &[f64],
) -> Result<(f64, Vec<[f64; ACTIONS]>)> {
    let b = q.len();
    if b == 0 || targets.len() != b || batch_weights.len() != b {
        return Err(Error::InvalidParameter("loss inputs must share a non-zero batch size".into()));
    }
    if targets.iter().flatten().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::InvalidParameter("loss targets must lie in [0, 1]".into()));
    }
    if action_weights.iter().chain(batch_weights).any(|&w| !(w > 0.0)) {
        return Err(Error::InvalidParameter("loss weights must be positive".into()));
    }
    let scale = 1.0 / (b as f64 * ACTIONS as f64);
    let mut loss = 0.0;
    let mut grad = vec![[0.0; ACTIONS]; b];
    for i in 0..b {
        for a in 0..ACTIONS {
            let (x, r) = (q[i][a], targets[i][a]);
            let w = scale * batch_weights[i] * action_weights[a];
            loss += w * (softplus(x) - r * x);
            grad[i][a] = w * (1.0 / (1.0 + (-x).exp()) - r);
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnConfig {
    pub hidden: usize,
    pub layers: usize,
    pub seq_len: usize,
    pub batch_size: usize,
    pub batches_per_episode: usize,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub memory_capacity: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Share of training over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    pub adam: AdamConfig,
    /// Mixes the next step's best predicted value into the targets.
    pub bootstrap_discount: Option<f64>,
    pub accuracy_window: usize,
    pub seed: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden: 50,
            layers: 2,
            seq_len: 100,
            batch_size: 200,
            batches_per_episode: 2,
            episodes: 300,
            steps_per_episode: 100,
            memory_capacity: 100_000,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.5,
            adam: AdamConfig::default(),
            bootstrap_discount: None,
            accuracy_window: 10,
            seed: 0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.batch_size == 0 || self.steps_per_episode == 0 {
            return Err(Error::InvalidParameter("network and batch sizes must be positive".into()));
        }
        if self.memory_capacity < self.batches_per_episode * self.batch_size {
            return Err(Error::InvalidParameter("replay capacity below N * B".into()));
        }
        Ok(())
    }

    pub fn build_network(&self) -> QNetwork {
        QNetwork::new(FEATURES, self.hidden, self.layers, self.seed)
    }

    fn epsilon(&self, episode: usize) -> f64 {
        let span = (self.episodes as f64 * self.epsilon_decay_fraction).max(1.0);
        let frac = (episode as f64 / span).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningPoint {
    pub episode: usize,
    /// Share of epochs where the greedy action matched the best action.
    pub accuracy: f64,
    pub loss: f64,
    /// Standard deviation of accuracy over the trailing window.
    pub std: f64,
    pub epsilon: f64,
}

fn targets_for(memory: &ReplayMemory, range: std::ops::Range<usize>) -> Vec<[f64; ACTIONS]> {
    range.map(|i| memory.get(i).action_rewards.map(normalize_reward)).collect()
}

fn train_batch(net: &mut QNetwork, opt: &mut Adam, memory: &ReplayMemory, cfg: &DqnConfig, rng: &mut impl Rng) -> Result<f64> {
    let start = memory.sample_start(cfg.batch_size, rng).expect("memory holds a batch");
    let warm = cfg.seq_len.min(start);
    let span = start - warm..start + cfg.batch_size;
    let xs: Vec<Vec<f64>> = span.clone().map(|i| memory.get(i).state.clone()).collect();
    let resets: Vec<bool> = span.map(|i| memory.get(i).episode_start).collect();
    let unroll = net.unroll_with_resets(&xs, &resets);
    let q = &unroll.q[warm..];
    let mut targets = targets_for(memory, start..start + cfg.batch_size);
    if let Some(gamma) = cfg.bootstrap_discount {
        for t in 0..targets.len() {
            let next = unroll.q.get(warm + t + 1).unwrap_or(&unroll.q[warm + t]);
            let best = next.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).fold(0.0, f64::max);
            for r in targets[t].iter_mut() {
                *r = (*r + gamma * best) / (1.0 + gamma);
            }
        }
    }
    let (loss, dq_tail) = dqn_loss(q, &targets, &memory.action_weights(), &vec![1.0; cfg.batch_size])?;
    let mut dq = vec![[0.0; ACTIONS]; warm];
    dq.extend(dq_tail);
    let mut grad = net.zeros_like();
    net.backward(&unroll, &dq, &mut grad);
    opt.apply(net, &grad);
    Ok(loss)
}

/// Interacts with the simulator on `stream`, storing experiences and
/// fitting the network on replayed batches after every episode.
pub fn train(
    net: &mut QNetwork,
    stream: &ArrivalStream,
    model: &PowerModel,
    weights: &RewardWeights,
    sim_config: &SimConfig,
    cfg: &DqnConfig,
) -> Result<Vec<LearningPoint>> {
    cfg.validate()?;
    let quiet = SimConfig { record_rewards: false, ..sim_config.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut memory = ReplayMemory::new(cfg.memory_capacity);
    let mut opt = Adam::new(net, cfg.adam);
    let mut sim = Simulator::new(stream, model, weights, &quiet)?;
    let mut state = net.zero_state();
    let mut x = encode(&sim.observe());
    let mut fresh = true;
    let mut curve: Vec<LearningPoint> = Vec::with_capacity(cfg.episodes);

    for episode in 0..cfg.episodes {
        let epsilon = cfg.epsilon(episode);
        let mut correct = 0;
        for _ in 0..cfg.steps_per_episode {
            if sim.is_done() {
                sim = Simulator::new(stream, model, weights, &quiet)?;
                state = net.zero_state();
                x = encode(&sim.observe());
                fresh = true;
            }
            let q = net.step(&mut state, &x);
            let rewards = sim.counterfactual_rewards();
            let greedy = greedy_action(&q);
            if greedy == greedy_action(&rewards) {
                correct += 1;
            }
            let action = if rng.random::<f64>() < epsilon {
                Action::ALL[rng.random_range(0..ACTIONS)]
            } else {
                greedy
            };
            let out = sim.step(action);
            let next = encode(&sim.observe());
            memory.push(Experience {
                state: std::mem::replace(&mut x, next.clone()),
                action,
                reward: out.reward,
                next_state: next,
                action_rewards: rewards,
                episode_start: std::mem::take(&mut fresh),
            });
        }

        let mut loss = f64::NAN;
        if memory.len() >= cfg.batch_size {
            let mut total = 0.0;
            for _ in 0..cfg.batches_per_episode {
                total += train_batch(net, &mut opt, &memory, cfg, &mut rng)?;
            }
            loss = total / cfg.batches_per_episode.max(1) as f64;
            if !loss.is_finite() {
                return Err(Error::Diverged { episode, loss });
            }
        }

        let accuracy = correct as f64 / cfg.steps_per_episode as f64;
        let from = (episode + 1).saturating_sub(cfg.accuracy_window.max(1));
        let recent: Vec<f64> = curve[from.min(curve.len())..].iter().map(|p| p.accuracy).chain([accuracy]).collect();
        let mean = recent.iter().sum::<f64>() / recent.len() as f64;
        let std = (recent.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / recent.len() as f64).sqrt();
        curve.push(LearningPoint { episode, accuracy, loss, std, epsilon });
    }
    Ok(curve)
}

/// Greedy policy over a trained network, carrying the recurrent state
/// across decision epochs.
pub struct DqnPolicy {
    pub net: QNetwork,
    state: LstmState,
}

impl DqnPolicy {
    pub fn new(net: QNetwork) -> Self {
        let state = net.zero_state();
        Self { net, state }
    }
}

impl Policy for DqnPolicy {
    fn name(&self) -> String {
        "dqn".into()
    }

    fn act(&mut self, obs: &Observation) -> Action {
        greedy_action(&self.net.step(&mut self.state, &encode(obs)))
    }

    fn reset(&mut self) {
        self.state = self.net.zero_state();
    }
}

/// Share of epochs on a full greedy pass where the policy picks the action
/// with the highest windowed reward.
pub fn greedy_accuracy(
    policy: &mut dyn Policy,
    stream: &ArrivalStream,
    model: &PowerModel,
    weights: &RewardWeights,
    sim_config: &SimConfig,
) -> Result<f64> {
    let quiet = SimConfig { record_rewards: false, ..sim_config.clone() };
    let mut sim = Simulator::new(stream, model, weights, &quiet)?;
    policy.reset();
    let (mut hits, mut n) = (0usize, 0usize);
    while !sim.is_done() {
        let obs = sim.observe();
        let action = policy.act(&obs);
        hits += (action == greedy_action(&sim.counterfactual_rewards())) as usize;
        n += 1;
        sim.step(action);
    }
    Ok(if n == 0 { 1.0 } else { hits as f64 / n as f64 })
}
