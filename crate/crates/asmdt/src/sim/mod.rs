//! Symbol-level simulation of the capacity base station.
//!
//! Time advances in integer ticks of one OFDM symbol. Decisions are taken at
//! epochs: every idle FM tick, and at the end of a sleep window that found
//! no traffic. While users are queued, or during the anti-ping-pong hold
//! after a wake-up, the BS stays in FM without consulting the policy.

pub mod reward;
pub mod timeline;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::power::{normalized_saving, EnergyReport, OperatingMode, PowerModel, TransitionPower};
use crate::traffic::{Arrival, ArrivalStream};
use reward::{reward_delay, WindowReward};
pub use reward::RewardWeights;
pub use timeline::{BsMode, DelayedUser, FmState, ModeInterval, SleepTimeline, SwitchEvent};

pub const SYMBOLS_PER_SECOND: f64 = 14_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Fm,
    Sm2,
    Sm3,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Fm, Action::Sm2, Action::Sm3];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    fn sleep_mode(self) -> Option<BsMode> {
        match self {
            Action::Fm => None,
            Action::Sm2 => Some(BsMode::Sm2),
            Action::Sm3 => Some(BsMode::Sm3),
        }
    }
}

/// User departure rate from the Shannon-type link rate of the serving cell.
pub fn service_rate(bandwidth: f64, gain: f64, noise_density: f64, p_t: f64, file_size: f64) -> f64 {
    let h = gain / (noise_density * bandwidth);
    bandwidth * (h * p_t).ln_1p() / file_size
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub tick_seconds: f64,
    /// Bits one resource block carries in one tick.
    pub bits_per_rb: f64,
    /// Whether an idle FM tick drops into the SM1 sub-state.
    pub fm_sm1_enabled: bool,
    /// Ticks the BS is held in FM after waking from SM2/SM3.
    pub stay_awake_ticks: u64,
    /// Simulated span in seconds; the arrival stream's duration when unset.
    pub horizon: Option<f64>,
    pub background_power: f64,
    pub background_load_rb: u32,
    pub record_rewards: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            tick_seconds: 1.0 / SYMBOLS_PER_SECOND,
            bits_per_rb: 48.0,
            fm_sm1_enabled: true,
            stay_awake_ticks: 14,
            horizon: None,
            background_power: 0.0,
            background_load_rb: 0,
            record_rewards: true,
        }
    }
}

impl SimConfig {
    /// Bits per second the cell drains at full load.
    pub fn capacity_bps(&self, l_max: u32) -> f64 {
        l_max as f64 * self.bits_per_rb / self.tick_seconds
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub p_b: f64,
    pub l_b: u32,
    pub p_c: f64,
    pub l_c: u32,
    pub l_tot: u32,
    pub d_i: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub tick: u64,
    pub snapshot: EnvSnapshot,
    pub l_max: u32,
    pub prev_action: Action,
    pub ticks_since_epoch: u64,
    pub arrivals_since_epoch: u32,
    pub ticks_since_arrival: Option<u64>,
    pub queue_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub tick: u64,
    pub action: Action,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub action: Action,
    pub reward: f64,
    pub start_tick: u64,
    pub end_tick: u64,
}

#[derive(Debug, Clone)]
struct Queued {
    arrival_time: f64,
    demand: f64,
    remaining: f64,
    delayed: bool,
    started: bool,
}

#[derive(Debug, Clone, Copy)]
struct Ctx {
    tick_seconds: f64,
    capacity_bits: f64,
    bits_per_rb: f64,
    l_max: u32,
}

/// Queue and arrival cursor; cheap to clone at an epoch, when the queue is
/// empty, which is how counterfactual windows are evaluated.
#[derive(Debug, Clone)]
struct Core {
    tick: u64,
    next_arrival: usize,
    queue: VecDeque<Queued>,
    delayed_bits: f64,
    delayed_queued: usize,
    last_arrival_tick: Option<u64>,
}

impl Core {
    fn admit(&mut self, arrivals: &[Arrival], ctx: &Ctx, delayed: bool) -> u32 {
        let mut n = 0;
        while let Some(a) = arrivals.get(self.next_arrival) {
            if (a.time / ctx.tick_seconds).floor() as u64 > self.tick {
                break;
            }
            self.queue.push_back(Queued {
                arrival_time: a.time,
                demand: a.demand,
                remaining: a.demand,
                delayed,
                started: false,
            });
            if delayed {
                self.delayed_bits += a.demand;
                self.delayed_queued += 1;
            }
            self.next_arrival += 1;
            self.last_arrival_tick = Some(self.tick);
            n += 1;
        }
        n
    }

    fn serve(&mut self, ctx: &Ctx, delayed_out: &mut Vec<DelayedUser>, served: &mut usize) -> u32 {
        let mut budget = ctx.capacity_bits;
        let mut used = 0.0;
        while budget > 0.0 {
            let Some(front) = self.queue.front_mut() else { break };
            if !front.started {
                front.started = true;
                if front.delayed {
                    delayed_out.push(DelayedUser {
                        arrival_time: front.arrival_time,
                        service_start: self.tick as f64 * ctx.tick_seconds,
                        demand: front.demand,
                    });
                }
            }
            let take = front.remaining.min(budget);
            front.remaining -= take;
            budget -= take;
            used += take;
            if front.delayed {
                self.delayed_bits -= take;
            }
            if front.remaining <= 1e-9 {
                if front.delayed {
                    self.delayed_queued -= 1;
                    if self.delayed_queued == 0 {
                        self.delayed_bits = 0.0;
                    }
                }
                self.queue.pop_front();
                *served += 1;
            }
        }
        ((used / ctx.bits_per_rb - 1e-9).ceil().max(0.0) as u32).min(ctx.l_max)
    }

    fn delayed_rb(&self, ctx: &Ctx) -> u32 {
        if self.delayed_queued == 0 {
            return 0;
        }
        ((self.delayed_bits.max(0.0) / ctx.bits_per_rb).ceil() as u32).clamp(1, ctx.l_max)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimOutput {
    pub timeline: SleepTimeline,
    pub rewards: Vec<RewardRecord>,
    pub epochs: u64,
    pub mean_reward: f64,
    pub arrivals: usize,
}

impl SimOutput {
    pub fn energy(&self, model: &PowerModel) -> Result<EnergyReport> {
        model.integrate(&self.timeline)
    }

    pub fn delayed_ratio(&self) -> f64 {
        if self.arrivals == 0 {
            0.0
        } else {
            self.timeline.delayed_users.len() as f64 / self.arrivals as f64
        }
    }

    /// Delayed-user ratio per hour of simulated time.
    pub fn delayed_ratio_per_hour(&self, stream: &ArrivalStream) -> Vec<f64> {
        let hours = (stream.duration / 3600.0).ceil().max(1.0) as usize;
        let mut total = vec![0usize; hours];
        let mut delayed = vec![0usize; hours];
        let bucket = |t: f64| ((t / 3600.0) as usize).min(hours - 1);
        for a in &stream.arrivals {
            total[bucket(a.time)] += 1;
        }
        for d in &self.timeline.delayed_users {
            delayed[bucket(d.arrival_time)] += 1;
        }
        total
            .iter()
            .zip(&delayed)
            .map(|(&n, &d)| if n == 0 { 0.0 } else { d as f64 / n as f64 })
            .collect()
    }
}

pub struct Simulator<'a> {
    arrivals: &'a [Arrival],
    model: PowerModel,
    weights: RewardWeights,
    config: SimConfig,
    ctx: Ctx,
    horizon_ticks: u64,
    core: Core,
    prev_action: Action,
    forced_until: u64,
    last_load: u32,
    last_power: f64,
    epoch_tick: u64,
    arrivals_since_epoch: u32,
    timeline: SleepTimeline,
    rewards: Vec<RewardRecord>,
    reward_sum: f64,
    epochs: u64,
    dwell_ticks: [u64; 4],
    delayed_arrivals: u64,
    admitted: usize,
}

impl<'a> Simulator<'a> {
    pub fn new(stream: &'a ArrivalStream, model: &PowerModel, weights: &RewardWeights, config: &SimConfig) -> Result<Self> {
        model.validate()?;
        weights.validate()?;
        if !(config.tick_seconds > 0.0 && config.bits_per_rb > 0.0) {
            return Err(Error::InvalidParameter("tick and RB size must be positive".into()));
        }
        for (mode, w) in [(OperatingMode::Sm2, weights.windows[1]), (OperatingMode::Sm3, weights.windows[2])] {
            if w < model.min_ticks(mode, config.tick_seconds) {
                return Err(Error::InvalidParameter(format!("{mode:?} window shorter than its minimum duration")));
            }
        }
        let horizon = config.horizon.unwrap_or(stream.duration);
        let ctx = Ctx {
            tick_seconds: config.tick_seconds,
            capacity_bits: weights.l_max as f64 * config.bits_per_rb,
            bits_per_rb: config.bits_per_rb,
            l_max: weights.l_max,
        };
        Ok(Self {
            arrivals: &stream.arrivals,
            model: model.clone(),
            weights: weights.clone(),
            config: config.clone(),
            ctx,
            horizon_ticks: (horizon / config.tick_seconds).round() as u64,
            core: Core {
                tick: 0,
                next_arrival: 0,
                queue: VecDeque::new(),
                delayed_bits: 0.0,
                delayed_queued: 0,
                last_arrival_tick: None,
            },
            prev_action: Action::Fm,
            forced_until: 0,
            last_load: 0,
            last_power: model.p_idle,
            epoch_tick: 0,
            arrivals_since_epoch: 0,
            timeline: SleepTimeline::new(config.tick_seconds, weights.l_max),
            rewards: Vec::new(),
            reward_sum: 0.0,
            epochs: 0,
            dwell_ticks: [0; 4],
            delayed_arrivals: 0,
            admitted: 0,
        })
    }

    pub fn tick(&self) -> u64 {
        self.core.tick
    }

    pub fn horizon_ticks(&self) -> u64 {
        self.horizon_ticks
    }

    pub fn weights(&self) -> &RewardWeights {
        &self.weights
    }

    /// Ticks spent per operating mode, indexed SM3, SM2, SM1, active.
    pub fn dwell_ticks(&self) -> [u64; 4] {
        self.dwell_ticks
    }

    /// Arrivals so far that found the BS in SM2 or SM3.
    pub fn delayed_arrivals(&self) -> u64 {
        self.delayed_arrivals
    }

    pub fn timeline(&self) -> &SleepTimeline {
        &self.timeline
    }

    pub fn at_epoch(&self) -> bool {
        self.core.queue.is_empty() && self.core.tick >= self.forced_until
    }

    pub fn is_done(&self) -> bool {
        self.core.tick >= self.horizon_ticks && self.at_epoch()
    }

    pub fn observe(&self) -> Observation {
        let d_i = self.core.delayed_rb(&self.ctx);
        let l_b = self.config.background_load_rb;
        Observation {
            tick: self.core.tick,
            snapshot: EnvSnapshot {
                p_b: self.config.background_power,
                l_b,
                p_c: self.last_power,
                l_c: self.last_load,
                l_tot: l_b + self.last_load + d_i,
                d_i,
            },
            l_max: self.weights.l_max,
            prev_action: self.prev_action,
            ticks_since_epoch: self.core.tick - self.epoch_tick,
            arrivals_since_epoch: self.arrivals_since_epoch,
            ticks_since_arrival: self.core.last_arrival_tick.map(|t| self.core.tick - t),
            queue_len: self.core.queue.len(),
        }
    }

    fn fm_state(&self, load: u32) -> FmState {
        if load > 0 {
            FmState::Serving
        } else if self.config.fm_sm1_enabled {
            FmState::Sm1
        } else {
            FmState::Idle
        }
    }

    /// One FM tick; returns (load, delayed RBs, power).
    fn fm_tick(&mut self) -> (u32, u32, f64) {
        let n = self.core.admit(self.arrivals, &self.ctx, false);
        self.arrivals_since_epoch += n;
        self.admitted += n as usize;
        let load = self
            .core
            .serve(&self.ctx, &mut self.timeline.delayed_users, &mut self.timeline.served_users);
        let state = self.fm_state(load);
        let op = BsMode::Fm(state).operating();
        let power = self
            .model
            .instantaneous_power(op, load as f64 / self.weights.l_max as f64);
        self.timeline.push_fm_tick(self.core.tick, state, load);
        self.dwell_ticks[op as usize] += 1;
        self.last_load = load;
        self.last_power = power;
        self.core.tick += 1;
        (load, self.core.delayed_rb(&self.ctx), power)
    }

    fn sleep_window(&mut self, mode: BsMode, ticks: u64, acc: &mut WindowReward) {
        let start = self.core.tick;
        let op = mode.operating();
        let sleep_power = self.model.instantaneous_power(op, 0.0);
        let mut wake = None;
        for _ in 0..ticks {
            let n = self.core.admit(self.arrivals, &self.ctx, true);
            self.arrivals_since_epoch += n;
            self.admitted += n as usize;
            self.delayed_arrivals += n as u64;
            if n > 0 && wake.is_none() {
                wake = Some(self.core.tick);
            }
            let power = self.window_power(sleep_power, wake.is_some());
            acc.push(normalized_saving(&self.model, power), reward_delay(self.core.delayed_rb(&self.ctx), 0, self.ctx.l_max));
            self.core.tick += 1;
        }
        self.timeline.push_window(start, self.core.tick, mode, wake);
        self.dwell_ticks[op as usize] += ticks;
        self.last_load = 0;
        self.last_power = sleep_power;
    }

    fn window_power(&self, sleep_power: f64, waking: bool) -> f64 {
        if waking && self.model.transition_power == TransitionPower::Destination {
            self.model.p_idle
        } else {
            sleep_power
        }
    }

    /// Windowed reward each action would earn from the current epoch.
    pub fn counterfactual_rewards(&self) -> [f64; 3] {
        let mut out = [0.0; 3];
        let mut scratch = Vec::new();
        let mut served = 0;
        for action in Action::ALL {
            let mut core = self.core.clone();
            let mut acc = WindowReward::new(self.weights.alpha);
            match action.sleep_mode() {
                None => {
                    core.admit(self.arrivals, &self.ctx, false);
                    let load = core.serve(&self.ctx, &mut scratch, &mut served);
                    let op = BsMode::Fm(self.fm_state(load)).operating();
                    let power = self.model.instantaneous_power(op, load as f64 / self.ctx.l_max as f64);
                    acc.push(normalized_saving(&self.model, power), reward_delay(core.delayed_rb(&self.ctx), load, self.ctx.l_max));
                }
                Some(mode) => {
                    let sleep_power = self.model.instantaneous_power(mode.operating(), 0.0);
                    let mut waking = false;
                    for _ in 0..self.weights.windows[action.index()] {
                        waking |= core.admit(self.arrivals, &self.ctx, true) > 0;
                        let power = self.window_power(sleep_power, waking);
                        acc.push(normalized_saving(&self.model, power), reward_delay(core.delayed_rb(&self.ctx), 0, self.ctx.l_max));
                        core.tick += 1;
                    }
                }
            }
            out[action.index()] = acc.finish(action != self.prev_action);
        }
        out
    }

    /// Applies `action` at the current epoch and advances to the next one.
    pub fn step(&mut self, action: Action) -> StepOutcome {
        assert!(self.at_epoch(), "step called outside a decision epoch");
        let start_tick = self.core.tick;
        self.epoch_tick = start_tick;
        self.arrivals_since_epoch = 0;
        let mut acc = WindowReward::new(self.weights.alpha);
        match action.sleep_mode() {
            None => {
                let (load, delayed, power) = self.fm_tick();
                acc.push(normalized_saving(&self.model, power), reward_delay(delayed, load, self.ctx.l_max));
            }
            Some(mode) => {
                self.sleep_window(mode, self.weights.windows[action.index()], &mut acc);
                if !self.core.queue.is_empty() {
                    self.forced_until = self.core.tick + self.config.stay_awake_ticks;
                }
            }
        }
        let reward = acc.finish(action != self.prev_action);
        self.prev_action = action;
        while !self.at_epoch() {
            self.fm_tick();
        }
        self.epochs += 1;
        self.reward_sum += reward;
        if self.config.record_rewards {
            self.rewards.push(RewardRecord { tick: start_tick, action, reward });
        }
        StepOutcome {
            action,
            reward,
            start_tick,
            end_tick: self.core.tick,
        }
    }

    pub fn finish(self) -> SimOutput {
        debug_assert_eq!(self.timeline.served_users + self.core.queue.len(), self.admitted);
        SimOutput {
            mean_reward: if self.epochs > 0 { self.reward_sum / self.epochs as f64 } else { 0.0 },
            timeline: self.timeline,
            rewards: self.rewards,
            epochs: self.epochs,
            arrivals: self.admitted,
        }
    }
}

/// Runs `policy` over the whole arrival stream.
pub fn run(
    stream: &ArrivalStream,
    policy: &mut dyn Policy,
    model: &PowerModel,
    weights: &RewardWeights,
    config: &SimConfig,
) -> Result<SimOutput> {
    let mut sim = Simulator::new(stream, model, weights, config)?;
    policy.reset();
    while !sim.is_done() {
        let obs = sim.observe();
        let action = policy.act(&obs);
        sim.step(action);
    }
    Ok(sim.finish())
}
