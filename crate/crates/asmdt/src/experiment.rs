//! Experiment configuration and the runners behind the command line: single
//! simulations, the alpha and arrival-rate sweeps, and the risk-gate demo.
//! All randomness derives from the one master seed.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::dqn::{self, DqnConfig, DqnPolicy, LearningPoint};
use crate::policy::lstm::QNetwork;
use crate::policy::{obs_timeline, train_q_table, FixedAction, OnlySm1, Policy, QPolicy, QTrainConfig};
use crate::power::{EnergyReport, ModeDwell, PowerModel};
use crate::risk::{rdm_actual, ActualRdm, GateConfig, GateRecord, GateState, GatedPolicy};
use crate::sim::{run, Action, RewardWeights, SimConfig, SimOutput, Simulator, SleepTimeline};
use crate::threshold::{SleepArrivals, ThresholdParams};
use crate::traffic::{fit_ipp, generate_arrivals, ingest_trace, slot_statistics, ArrivalStream, FitOptions, IppParams};
use crate::twin::{estimate_params, evaluate, ChainSpec, ExitRule, RdmReport};

/// Mixes a stream index into the master seed (splitmix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficConfig {
    pub ipp: IppParams,
    /// Seconds of traffic to evaluate on.
    pub duration: f64,
    /// Seconds of separate traffic used for training.
    pub train_duration: f64,
    /// Operator trace; when set, `slot` selects which fitted slot drives
    /// generation.
    pub trace: Option<PathBuf>,
    pub slot: usize,
    pub slot_duration: f64,
    pub fit: FitOptions,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            ipp: IppParams::new(12.0, 0.1, 0.5, 2000.0),
            duration: 20.0,
            train_duration: 10.0,
            trace: None,
            slot: 0,
            slot_duration: 300.0,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    #[default]
    Dqn,
    QTable,
    OnlySm1,
    AlwaysSm2,
    AlwaysSm3,
    Obs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub kind: AgentKind,
    pub dqn: DqnConfig,
    pub qtable: QTrainConfig,
    /// Trained network to load instead of training from scratch.
    pub checkpoint: Option<PathBuf>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            kind: AgentKind::Dqn,
            dqn: DqnConfig::default(),
            qtable: QTrainConfig::default(),
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwinConfig {
    pub spec: ChainSpec,
    pub exit_rule: ExitRule,
}

impl Default for TwinConfig {
    fn default() -> Self {
        Self {
            spec: ChainSpec::default(),
            exit_rule: ExitRule::Arrival,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub alpha_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            alpha_grid: (0..10).map(|i| i as f64 / 9.0).collect(),
            lambda_grid: (0..20).map(|i| 1.0 + 9.0 * i as f64 / 19.0).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskDemoConfig {
    pub duration: f64,
    pub burst_start: f64,
    pub burst_duration: f64,
    /// Factor applied to the ON arrival rate during the burst.
    pub burst_multiplier: f64,
    /// Trailing span, seconds, the twin is re-estimated on.
    pub estimation_span: f64,
}

impl Default for RiskDemoConfig {
    fn default() -> Self {
        Self {
            duration: 60.0,
            burst_start: 20.0,
            burst_duration: 10.0,
            burst_multiplier: 10.0,
            estimation_span: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    pub params: ThresholdParams,
    pub max_users: usize,
    pub sleep_arrivals: SleepArrivals,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            params: ThresholdParams {
                lambda: 1.0,
                lambda2: 0.2,
                tau: 0.1,
                zeta: 0.5,
                mu: 5.0,
                n: 3,
            },
            max_users: 200,
            sleep_arrivals: SleepArrivals::Double,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub traffic: TrafficConfig,
    pub power: PowerModel,
    pub reward: RewardWeights,
    pub sim: SimConfig,
    pub agent: AgentConfig,
    pub twin: TwinConfig,
    pub gate: GateConfig,
    pub sweep: SweepConfig,
    pub risk_demo: RiskDemoConfig,
    pub threshold: ThresholdConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            traffic: TrafficConfig::default(),
            power: PowerModel::default(),
            reward: RewardWeights::default(),
            sim: SimConfig::default(),
            agent: AgentConfig::default(),
            twin: TwinConfig::default(),
            gate: GateConfig::default(),
            sweep: SweepConfig::default(),
            risk_demo: RiskDemoConfig::default(),
            threshold: ThresholdConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.power.validate()?;
        self.reward.validate()?;
        self.traffic.ipp.validate()?;
        self.agent.dqn.validate()?;
        self.twin.spec.validate()?;
        self.gate.validate()?;
        if !(self.traffic.duration > 0.0) || !(self.traffic.train_duration > 0.0) {
            return Err(Error::InvalidParameter("traffic durations must be positive".into()));
        }
        let d = &self.risk_demo;
        if d.burst_start < 0.0 || d.burst_start + d.burst_duration > d.duration {
            return Err(Error::InvalidParameter("burst window must lie inside the demo horizon".into()));
        }
        Ok(())
    }

    /// Traffic model in force: the configured IPP, or the fitted slot of
    /// the trace when one is given.
    pub fn traffic_params(&self) -> Result<IppParams> {
        let t = &self.traffic;
        let Some(path) = &t.trace else {
            return Ok(t.ipp);
        };
        let text = std::fs::read_to_string(path)?;
        let report = ingest_trace(&text, t.slot_duration)?;
        let stats = slot_statistics(&report.trace);
        let slot = stats
            .iter()
            .find(|s| s.slot_index == t.slot)
            .ok_or_else(|| Error::InvalidParameter(format!("slot {} has no samples", t.slot)))?;
        fit_ipp(slot, t.ipp.tau, t.ipp.zeta, t.slot_duration, t.fit)
    }

    pub fn eval_stream(&self) -> Result<ArrivalStream> {
        Ok(generate_arrivals(&self.traffic_params()?, self.traffic.duration, derive_seed(self.seed, 1)))
    }

    pub fn train_stream(&self) -> Result<ArrivalStream> {
        Ok(generate_arrivals(&self.traffic_params()?, self.traffic.train_duration, derive_seed(self.seed, 2)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: String,
    pub alpha: f64,
    pub saving_fraction: f64,
    pub energy_total: f64,
    pub energy_baseline: f64,
    pub switch_count: u64,
    pub dwell: ModeDwell,
    pub arrivals: usize,
    pub delayed_users: usize,
    pub delayed_ratio: f64,
    pub mean_reward: f64,
}

impl PolicySummary {
    fn new(policy: String, alpha: f64, energy: &EnergyReport, timeline: &SleepTimeline, arrivals: usize, mean_reward: f64) -> Self {
        let delayed = timeline.delayed_users.len();
        Self {
            policy,
            alpha,
            saving_fraction: energy.saving_fraction,
            energy_total: energy.energy_total,
            energy_baseline: energy.energy_no_sleep_baseline,
            switch_count: energy.switch_count,
            dwell: energy.dwell,
            arrivals,
            delayed_users: delayed,
            delayed_ratio: if arrivals == 0 { 0.0 } else { delayed as f64 / arrivals as f64 },
            mean_reward,
        }
    }

    pub fn from_output(policy: String, alpha: f64, out: &SimOutput, model: &PowerModel) -> Result<Self> {
        let energy = out.energy(model)?;
        Ok(Self::new(policy, alpha, &energy, &out.timeline, out.arrivals, out.mean_reward))
    }
}

/// Offline-optimal schedule on `stream`, built from an FM-only reference run.
pub fn obs_run(stream: &ArrivalStream, model: &PowerModel, weights: &RewardWeights, sim: &SimConfig) -> Result<(SleepTimeline, PolicySummary)> {
    let reference = run(stream, &mut OnlySm1, model, weights, sim)?;
    let (timeline, _) = obs_timeline(&reference.timeline, weights.windows);
    let energy = model.integrate(&timeline)?;
    let summary = PolicySummary::new("obs".into(), weights.alpha, &energy, &timeline, reference.arrivals, f64::NAN);
    Ok((timeline, summary))
}

/// A trained or fixed policy plus its learning curve, when it has one.
pub struct BuiltPolicy {
    pub policy: Box<dyn Policy>,
    pub curve: Vec<LearningPoint>,
    pub network: Option<QNetwork>,
}

/// Trains (or loads) the configured agent on `train`.
pub fn build_policy(cfg: &ExperimentConfig, weights: &RewardWeights, train: &ArrivalStream, seed: u64) -> Result<BuiltPolicy> {
    let fixed = |p: Box<dyn Policy>| BuiltPolicy { policy: p, curve: Vec::new(), network: None };
    Ok(match cfg.agent.kind {
        AgentKind::OnlySm1 | AgentKind::Obs => fixed(Box::new(OnlySm1)),
        AgentKind::AlwaysSm2 => fixed(Box::new(FixedAction(Action::Sm2))),
        AgentKind::AlwaysSm3 => fixed(Box::new(FixedAction(Action::Sm3))),
        AgentKind::QTable => {
            let qcfg = QTrainConfig { seed, ..cfg.agent.qtable.clone() };
            let table = train_q_table(train, &cfg.power, weights, &cfg.sim, &qcfg)?;
            fixed(Box::new(QPolicy { table }))
        }
        AgentKind::Dqn => {
            if let Some(path) = &cfg.agent.checkpoint {
                let net = QNetwork::from_checkpoint(&std::fs::read_to_string(path)?)?;
                BuiltPolicy {
                    policy: Box::new(DqnPolicy::new(net.clone())),
                    curve: Vec::new(),
                    network: Some(net),
                }
            } else {
                let dcfg = DqnConfig { seed, ..cfg.agent.dqn.clone() };
                let mut net = dcfg.build_network();
                let curve = dqn::train(&mut net, train, &cfg.power, weights, &cfg.sim, &dcfg)?;
                BuiltPolicy {
                    policy: Box::new(DqnPolicy::new(net.clone())),
                    curve,
                    network: Some(net),
                }
            }
        }
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationReport {
    pub summary: PolicySummary,
    pub delayed_ratio_per_hour: Vec<f64>,
    pub timeline: SleepTimeline,
    pub curve: Vec<LearningPoint>,
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<SimulationReport> {
    cfg.validate()?;
    let stream = cfg.eval_stream()?;
    if cfg.agent.kind == AgentKind::Obs {
        let reference = run(&stream, &mut OnlySm1, &cfg.power, &cfg.reward, &cfg.sim)?;
        let (timeline, summary) = obs_run(&stream, &cfg.power, &cfg.reward, &cfg.sim)?;
        return Ok(SimulationReport {
            summary,
            delayed_ratio_per_hour: vec![0.0; reference.delayed_ratio_per_hour(&stream).len()],
            timeline,
            curve: Vec::new(),
        });
    }
    let train = cfg.train_stream()?;
    let mut built = build_policy(cfg, &cfg.reward, &train, derive_seed(cfg.seed, 3))?;
    let out = run(&stream, built.policy.as_mut(), &cfg.power, &cfg.reward, &cfg.sim)?;
    Ok(SimulationReport {
        summary: PolicySummary::from_output(built.policy.name(), cfg.reward.alpha, &out, &cfg.power)?,
        delayed_ratio_per_hour: out.delayed_ratio_per_hour(&stream),
        timeline: out.timeline,
        curve: built.curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSweep {
    pub rows: Vec<PolicySummary>,
    pub obs: PolicySummary,
    /// Only-SM1 evaluated at every grid point.
    pub only_sm1: Vec<PolicySummary>,
}

/// Trains the configured agent once per alpha and evaluates all of them on
/// the same traffic, alongside the OBS and only-SM1 baselines.
pub fn alpha_sweep(cfg: &ExperimentConfig) -> Result<AlphaSweep> {
    cfg.validate()?;
    if cfg.sweep.alpha_grid.is_empty() {
        return Err(Error::InvalidParameter("empty alpha grid".into()));
    }
    let stream = cfg.eval_stream()?;
    let train = cfg.train_stream()?;
    let mut rows = Vec::new();
    let mut only_sm1 = Vec::new();
    for (i, &alpha) in cfg.sweep.alpha_grid.iter().enumerate() {
        let weights = RewardWeights { alpha, ..cfg.reward.clone() };
        let mut built = build_policy(cfg, &weights, &train, derive_seed(cfg.seed, 100 + i as u64))?;
        let out = run(&stream, built.policy.as_mut(), &cfg.power, &weights, &cfg.sim)?;
        rows.push(PolicySummary::from_output(built.policy.name(), alpha, &out, &cfg.power)?);
        let base = run(&stream, &mut OnlySm1, &cfg.power, &weights, &cfg.sim)?;
        only_sm1.push(PolicySummary::from_output("only_sm1".into(), alpha, &base, &cfg.power)?);
    }
    let (_, obs) = obs_run(&stream, &cfg.power, &cfg.reward, &cfg.sim)?;
    Ok(AlphaSweep { rows, obs, only_sm1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaPoint {
    pub lambda: f64,
    pub report: RdmReport,
}

pub fn lambda_sweep(cfg: &TwinConfig, grid: &[f64]) -> Result<Vec<LambdaPoint>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty lambda grid".into()));
    }
    grid.iter()
        .map(|&lambda| {
            let report = evaluate(&cfg.spec.with_lambda(lambda, cfg.exit_rule))?;
            Ok(LambdaPoint { lambda, report })
        })
        .collect()
}

/// Normal traffic, with the source held ON and its rate multiplied inside
/// the burst window so the anomaly cannot hide in an OFF period.
pub fn burst_stream(base: &IppParams, demo: &RiskDemoConfig, seed: u64) -> ArrivalStream {
    let burst = IppParams {
        lambda_on: base.lambda_on * demo.burst_multiplier,
        zeta: 0.0,
        ..*base
    };
    let end = demo.burst_start + demo.burst_duration;
    let mut stream = generate_arrivals(base, demo.burst_start, derive_seed(seed, 10));
    stream.append(generate_arrivals(&burst, demo.burst_duration, derive_seed(seed, 11)));
    stream.append(generate_arrivals(base, demo.duration - end, derive_seed(seed, 12)));
    stream.seed = seed;
    stream
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRun {
    pub gated: bool,
    pub log: Vec<GateRecord>,
    pub delayed_in_burst: usize,
    pub delayed_total: usize,
    pub summary: PolicySummary,
    /// Delays of users delayed outside and inside the burst, sorted.
    pub delays_normal: Vec<f64>,
    pub delays_burst: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskDemoReport {
    pub burst: (f64, f64),
    pub gated: DemoRun,
    pub ungated: DemoRun,
}

/// Steps the simulator window by window. Each window closes with a measured
/// risk, a twin prediction re-estimated on the trailing span, and a gate
/// decision that applies from the next window on. The ungated run logs the
/// same quantities but never acts on them.
fn demo_run(cfg: &ExperimentConfig, stream: &ArrivalStream, policy: &mut dyn Policy, gated: bool) -> Result<DemoRun> {
    let demo = cfg.risk_demo;
    let dt = cfg.sim.tick_seconds;
    let window_ticks = ((cfg.gate.eval_window / dt).round() as u64).max(1);
    let span_ticks = ((demo.estimation_span / dt).round() as u64).max(window_ticks);
    let quiet = SimConfig { record_rewards: false, ..cfg.sim.clone() };
    let mut gate_policy = GatedPolicy::new(policy);
    let mut sim = Simulator::new(stream, &cfg.power, &cfg.reward, &quiet)?;
    gate_policy.reset();
    let mut gate = GateState::new(cfg.gate);
    let mut twin = cfg.twin.spec.clone();
    twin.mu = cfg.sim.capacity_bps(cfg.reward.l_max) / stream_mean_demand(stream, &cfg.traffic.ipp);
    let mut log = Vec::new();
    let mut boundary = window_ticks;
    let mut last_delayed = 0;
    let mut last_sleep = 0;

    while !sim.is_done() {
        let obs = sim.observe();
        let action = gate_policy.act(&obs);
        sim.step(action);
        if sim.tick() < boundary && !sim.is_done() {
            continue;
        }
        let now = sim.tick();
        let [sm3, sm2, ..] = sim.dwell_ticks();
        let delayed = sim.delayed_arrivals();
        let slept = sm3 + sm2;
        let window_s = (now - (boundary - window_ticks)) as f64 * dt;
        let sleep_fraction = (slept - last_sleep) as f64 * dt / window_s.max(dt);
        let actual = rdm_actual(delayed - last_delayed, window_s, sleep_fraction).unwrap_or(ActualRdm { value: None, std_err: 0.0 });
        last_delayed = delayed;
        last_sleep = slept;

        let from = now.saturating_sub(span_ticks);
        let observed = stream.window(from as f64 * dt, now as f64 * dt);
        let timeline = sim.timeline().window(from, now);
        twin = estimate_params(&timeline, &observed, &twin, cfg.twin.exit_rule).spec;
        let rdm_dt = evaluate(&twin).map(|r| r.rdm).unwrap_or(0.0);

        let (next, action) = gate.decide(actual, rdm_dt, window_s);
        gate = next;
        if gated {
            gate_policy.sleep_allowed = gate.sleep_allowed();
        }
        log.push(GateRecord {
            time: now as f64 * dt,
            rdm_a: actual.value,
            rdm_dt,
            status: gate.status,
            action,
        });
        while boundary <= now {
            boundary += window_ticks;
        }
    }

    let out = sim.finish();
    let (b0, b1) = (demo.burst_start, demo.burst_start + demo.burst_duration);
    let in_burst = |t: f64| t >= b0 && t < b1;
    let mut delays_normal: Vec<f64> = Vec::new();
    let mut delays_burst: Vec<f64> = Vec::new();
    for u in &out.timeline.delayed_users {
        if in_burst(u.arrival_time) {
            delays_burst.push(u.delay());
        } else {
            delays_normal.push(u.delay());
        }
    }
    delays_normal.sort_by(f64::total_cmp);
    delays_burst.sort_by(f64::total_cmp);
    Ok(DemoRun {
        gated,
        log,
        delayed_in_burst: delays_burst.len(),
        delayed_total: out.timeline.delayed_users.len(),
        summary: PolicySummary::from_output(gate_policy.name(), cfg.reward.alpha, &out, &cfg.power)?,
        delays_normal,
        delays_burst,
    })
}

fn stream_mean_demand(stream: &ArrivalStream, fallback: &IppParams) -> f64 {
    if stream.arrivals.is_empty() {
        fallback.mean_demand
    } else {
        stream.total_demand() / stream.arrivals.len() as f64
    }
}

/// Runs the same policy over burst traffic with and without the gate.
pub fn risk_demo(cfg: &ExperimentConfig, policy: &mut dyn Policy) -> Result<RiskDemoReport> {
    cfg.validate()?;
    let base = cfg.traffic_params()?;
    let stream = burst_stream(&base, &cfg.risk_demo, derive_seed(cfg.seed, 4));
    let gated = demo_run(cfg, &stream, policy, true)?;
    let ungated = demo_run(cfg, &stream, policy, false)?;
    let d = cfg.risk_demo;
    Ok(RiskDemoReport {
        burst: (d.burst_start, d.burst_start + d.burst_duration),
        gated,
        ungated,
    })
}

/// Empirical CDF points `(x, F(x))` of sorted samples.
pub fn ecdf(sorted: &[f64]) -> Vec<(f64, f64)> {
    let n = sorted.len() as f64;
    sorted.iter().enumerate().map(|(i, &x)| (x, (i + 1) as f64 / n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_and_validates() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"seed": 9}"#).unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.gate.threshold, 1.2);
    }

    #[test]
    fn seeds_differ_by_index() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_eq!(derive_seed(5, 3), derive_seed(5, 3));
    }

    #[test]
    fn lambda_sweep_emits_one_point_each() {
        let pts = lambda_sweep(&TwinConfig::default(), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(pts.len(), 3);
        assert!(pts.iter().all(|p| p.report.rdm >= 0.0));
    }

    #[test]
    fn burst_stream_spans_the_horizon() {
        let demo = RiskDemoConfig::default();
        let s = burst_stream(&IppParams::new(2.0, 0.1, 0.5, 2000.0), &demo, 3);
        assert_eq!(s.duration, demo.duration);
        let inside = s.arrivals.iter().filter(|a| a.time >= 20.0 && a.time < 30.0).count();
        assert!(inside > 0);
    }

    #[test]
    fn ecdf_ends_at_one() {
        let c = ecdf(&[0.1, 0.2, 0.4]);
        assert_eq!(c.last().unwrap().1, 1.0);
    }

    #[test]
    fn obs_run_has_no_delay() {
        let s = generate_arrivals(&IppParams::new(12.0, 0.1, 0.5, 2000.0), 1.0, 4);
        let (tl, summary) = obs_run(&s, &PowerModel::default(), &RewardWeights::default(), &SimConfig::default()).unwrap();
        assert!(tl.is_partition());
        assert_eq!(summary.delayed_users, 0);
    }
}
