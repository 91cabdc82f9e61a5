use asmdt::policy::{obs_fit, FixedAction, OnlySm1, Policy};
use asmdt::power::{OperatingMode, PowerModel};
use asmdt::risk::{smooth, ActualRdm, GateAction, GateConfig, GateState, GateStatus};
use asmdt::sim::reward::{reward_delay, reward_power, RewardWeights};
use asmdt::sim::{Action, Observation, SimConfig, Simulator};
use asmdt::threshold::{closed_forms, kappa, numeric_oracle, SleepArrivals, ThresholdParams};
use asmdt::traffic::{count_moments, generate_arrivals, Arrival, ArrivalStream, IppParams};
use asmdt::twin::{evaluate, solve_spec, ChainSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ipp() -> impl Strategy<Value = IppParams> {
    (0.1..50.0f64, 0.01..5.0f64, 0.01..5.0f64, 1e2..1e5f64).prop_map(|(l, t, z, d)| IppParams::new(l, t, z, d))
}

struct Coin(ChaCha8Rng);

impl Policy for Coin {
    fn name(&self) -> String {
        "coin".into()
    }

    fn act(&mut self, _obs: &Observation) -> Action {
        Action::ALL[self.0.random_range(0..3)]
    }
}

/// Arrivals on the tick grid, so streams stay short and dense enough to
/// wake the BS several times.
fn stream() -> impl Strategy<Value = ArrivalStream> {
    prop::collection::vec((0u32..2800, 1e2..2e5f64), 0..25).prop_map(|mut v| {
        v.sort_by_key(|a| a.0);
        v.dedup_by_key(|a| a.0);
        let tick = 1.0 / 14000.0;
        ArrivalStream {
            arrivals: v.iter().map(|&(k, d)| Arrival { time: (k as f64 + 0.5) * tick, demand: d }).collect(),
            on_intervals: vec![(0.0, 0.2)],
            duration: 0.2,
            seed: 0,
        }
    })
}

fn run(s: &ArrivalStream, policy: &mut dyn Policy, cfg: &SimConfig) -> (asmdt::sim::SimOutput, usize) {
    let mut sim = Simulator::new(s, &PowerModel::default(), &RewardWeights::default(), cfg).unwrap();
    policy.reset();
    while !sim.is_done() {
        let obs = sim.observe();
        let a = policy.act(&obs);
        sim.step(a);
    }
    let queued = sim.observe().queue_len;
    (sim.finish(), queued)
}

proptest! {
    #[test]
    fn ipp_stationary_sums_to_one(p in ipp()) {
        let (on, off) = p.stationary();
        prop_assert!((on + off - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ipp_is_overdispersed(p in ipp(), window in 0.01..100.0f64) {
        let (m, v) = count_moments(&p, window, true);
        prop_assert!(v >= m * (1.0 - 1e-12));
        let flat = IppParams::new(p.lambda_on, p.tau, 0.0, p.mean_demand);
        let (m0, v0) = count_moments(&flat, window, true);
        prop_assert!((v0 - m0).abs() <= 1e-9 * m0.max(1.0));
    }

    #[test]
    fn generation_is_pure_and_inside_on(p in ipp(), seed in any::<u64>()) {
        let a = generate_arrivals(&p, 20.0, seed);
        prop_assert_eq!(&a, &generate_arrivals(&p, 20.0, seed));
        prop_assert!(a.arrivals.windows(2).all(|w| w[0].time < w[1].time));
        prop_assert!(a.arrivals.iter().all(|x| a.is_on(x.time) && x.time < a.duration));
    }

    #[test]
    fn power_monotone(lo in 0.0..1.0f64, hi in 0.0..1.0f64) {
        let m = PowerModel::default();
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        prop_assert!(m.instantaneous_power(OperatingMode::Active, lo) <= m.instantaneous_power(OperatingMode::Active, hi));
        let order = [OperatingMode::Sm3, OperatingMode::Sm2, OperatingMode::Sm1];
        prop_assert!(order.windows(2).all(|w| m.instantaneous_power(w[0], 0.0) < m.instantaneous_power(w[1], 0.0)));
        prop_assert!(m.instantaneous_power(OperatingMode::Sm1, 0.0) < m.instantaneous_power(OperatingMode::Active, lo));
    }

    #[test]
    fn reward_terms_bounded(d in 0u32..300, s in 0u32..300, l in 1u32..200) {
        let r = reward_delay(d, s, l);
        prop_assert!((-1.0..=1.0).contains(&r));
        let m = PowerModel::default();
        for mode in [OperatingMode::Active, OperatingMode::Sm1, OperatingMode::Sm2, OperatingMode::Sm3] {
            prop_assert!((0.0..=1.0).contains(&reward_power(mode, &m)));
        }
    }

    #[test]
    fn obs_fit_is_greedy_and_exact(runs in prop::collection::vec(0u64..5000, 0..30)) {
        let s = obs_fit(&runs, [1, 14, 140]);
        for f in &s.runs {
            prop_assert_eq!(f.n_sm3 * 140 + f.n_sm2 * 14 + f.n_sm1 + f.residual, f.run);
            prop_assert_eq!(f.residual, 0);
            prop_assert_eq!(f.n_sm3, f.run / 140);
            prop_assert!(f.n_sm2 < 10 && f.n_sm1 < 14);
        }
    }

    #[test]
    fn smoothing_stays_in_range(xs in prop::collection::vec(0.0..10.0f64, 1..50), span in 1usize..8) {
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let out = smooth(&xs, span);
        prop_assert_eq!(out.len(), xs.len());
        prop_assert!(out.iter().all(|&y| y >= lo - 1e-12 && y <= hi + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn simulator_invariants(s in stream(), seed in any::<u64>()) {
        let cfg = SimConfig::default();
        let model = PowerModel::default();
        let (out, queued) = run(&s, &mut Coin(ChaCha8Rng::seed_from_u64(seed)), &cfg);
        prop_assert_eq!(out.timeline.served_users + queued, out.arrivals);
        prop_assert!(out.timeline.is_partition());
        prop_assert!(out.timeline.respects_min_durations(&model));
        prop_assert!(out.timeline.delayed_users.iter().all(|d| d.service_start >= d.arrival_time));
        let again = run(&s, &mut Coin(ChaCha8Rng::seed_from_u64(seed)), &cfg).0;
        prop_assert_eq!(&out.timeline, &again.timeline);
        let e = out.energy(&model).unwrap();
        prop_assert!((0.0..=1.0).contains(&e.saving_fraction));
        let dwell = e.dwell.total();
        prop_assert!((dwell - out.timeline.horizon_ticks() as f64 * cfg.tick_seconds).abs() < 1e-9);
    }

    #[test]
    fn never_sleeping_never_delays(s in stream()) {
        let (out, _) = run(&s, &mut OnlySm1, &SimConfig::default());
        prop_assert!(out.timeline.delayed_users.is_empty());
        let off = SimConfig { fm_sm1_enabled: false, ..SimConfig::default() };
        let (out, _) = run(&s, &mut FixedAction(Action::Fm), &off);
        prop_assert!(out.timeline.delayed_users.is_empty());
    }
}

fn chain() -> impl Strategy<Value = ChainSpec> {
    (0.2..8.0f64, 0.05..2.0f64, 0.05..2.0f64, 1.5..4.0f64, prop::array::uniform3(0.05..1.0f64), 0.0..0.5f64).prop_map(
        |(lambda, tau, zeta, load, split, hop)| {
            let total: f64 = split.iter().sum();
            let mut inter = [[0.0; 3]; 3];
            inter[0][1] = hop;
            inter[1][2] = hop;
            ChainSpec {
                max_users: 50,
                lambda,
                tau,
                zeta,
                mu: lambda * load,
                exit_rates: [lambda; 3],
                entry_split: split.map(|s| s / total),
                inter_sm: inter,
            }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn twin_steady_state(spec in chain()) {
        let (used, ss) = solve_spec(&spec).unwrap();
        prop_assert!((ss.total() - 1.0).abs() <= 1e-10);
        prop_assert!(ss.residual <= 1e-10);
        prop_assert!(ss.probs().iter().all(|&p| p >= 0.0));
        prop_assert!((ss.on_mass() - used.tau / (used.tau + used.zeta)).abs() <= 1e-10);
        let r = evaluate(&spec).unwrap();
        prop_assert_eq!(r.rdm * r.v_sleep, r.u_sleep);
        prop_assert!(r.v_sleep >= 0.0 && r.u_sleep >= 0.0 && r.f_m >= 0.0);
    }

    #[test]
    // Faster service empties the queue sooner, so sleep mass can only grow.
    fn sleep_mass_grows_with_service_rate(spec in chain()) {
        let grid: Vec<f64> = (0..6).map(|k| spec.lambda * (1.5 + k as f64)).collect();
        let vs: Vec<f64> = grid.iter().map(|&mu| evaluate(&ChainSpec { mu, ..spec.clone() }).unwrap().v_sleep).collect();
        prop_assert!(vs.windows(2).all(|w| w[1] >= w[0] - 1e-9), "{:?}", vs);
    }

    #[test]
    fn threshold_oracle_bounds(
        lambda in 0.2..3.0f64,
        lambda2 in 0.0..2.0f64,
        tau in 0.05..2.0f64,
        zeta in 0.05..2.0f64,
        n in 1usize..6,
    ) {
        let p = ThresholdParams { lambda, lambda2, tau, zeta, mu: 4.0 * lambda, n };
        prop_assert!(kappa(&p) >= 2.0);
        let c = closed_forms(&p).unwrap();
        let nu: Vec<f64> = (0..n).map(|m| c.nu10 * c.kappa.powi(-(m as i32))).collect();
        prop_assert!(nu.windows(2).all(|w| w[1] < w[0]));
        for arrivals in [SleepArrivals::Single, SleepArrivals::Double] {
            let o = numeric_oracle(&p, 200, arrivals).unwrap();
            prop_assert!((o.total_mass - 1.0).abs() <= 1e-10);
            let r = o.results;
            for q in [r.nu10, r.v_sleep, r.empty_sleep_prob] {
                prop_assert!((0.0..=1.0).contains(&q));
            }
            prop_assert!(r.u_sleep >= 0.0 && r.mean_delay >= 0.0);
        }
    }
}

fn calm() -> ActualRdm {
    ActualRdm::exact(0.1)
}

proptest! {
    #[test]
    fn gate_absorbs_while_prediction_high(rdm_dt in 1.21..50.0f64, steps in 1usize..60, actual in 0.0..5.0f64) {
        let mut g = GateState::new(GateConfig::default());
        for _ in 0..steps {
            let (next, action) = g.decide(ActualRdm::exact(actual), rdm_dt, 1.0);
            prop_assert_eq!(action, GateAction::Deactivate);
            prop_assert!(!next.sleep_allowed());
            g = next;
        }
    }

    #[test]
    fn reactivation_needs_uninterrupted_quiet(pattern in prop::collection::vec(any::<bool>(), 1..80)) {
        let cfg = GateConfig::default();
        let (mut g, _) = GateState::new(cfg).decide(calm(), 5.0, 1.0);
        let mut quiet = 0.0;
        for high in pattern {
            let was = g.status;
            let (next, action) = g.decide(calm(), if high { 5.0 } else { 0.2 }, 1.0);
            if high {
                quiet = 0.0;
                prop_assert_eq!(action, GateAction::Deactivate);
            } else if was != GateStatus::Active {
                quiet += 1.0;
                prop_assert_eq!(action == GateAction::Activate, quiet >= cfg.quiet_window);
                if action == GateAction::Activate {
                    quiet = 0.0;
                }
            }
            g = next;
        }
    }
}
