use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::chain::{ChainSpec, StateId};
use crate::sim::{BsMode, FmState, SleepTimeline};
use crate::traffic::{Arrival, ArrivalStream};

/// Jump sequence of one simulated chain trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPath {
    /// `(time, state)` at each entry, starting at time 0.
    pub jumps: Vec<(f64, usize)>,
    pub arrivals: Vec<f64>,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainRun {
    pub horizon: f64,
    /// Fraction of each batch spent in each state.
    pub batch_occupancy: Vec<Vec<f64>>,
    /// Mode switches per unit time in each batch.
    pub batch_switch_rate: Vec<f64>,
    pub path: Option<ChainPath>,
}

fn mean_and_err(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl ChainRun {
    /// Batch-means estimate and standard error of the time fraction spent
    /// in the states selected by `pick`.
    pub fn occupancy(&self, pick: impl Fn(usize) -> bool) -> (f64, f64) {
        mean_and_err(
            self.batch_occupancy
                .iter()
                .map(|b| b.iter().enumerate().filter(|(s, _)| pick(*s)).map(|(_, p)| p).sum::<f64>()),
        )
    }

    /// Batch-means estimate of a state-weighted average such as the mean
    /// number of active users.
    pub fn weighted(&self, weight: impl Fn(usize) -> f64) -> (f64, f64) {
        mean_and_err(
            self.batch_occupancy
                .iter()
                .map(|b| b.iter().enumerate().map(|(s, p)| weight(s) * p).sum::<f64>()),
        )
    }

    pub fn switch_rate(&self) -> (f64, f64) {
        mean_and_err(self.batch_switch_rate.iter().copied())
    }
}

fn is_switch(from: StateId, to: StateId) -> bool {
    match (from, to) {
        (StateId::Active { .. }, StateId::Sleep { .. }) | (StateId::Sleep { .. }, StateId::Active { .. }) => true,
        (StateId::Sleep { mode: a, .. }, StateId::Sleep { mode: b, .. }) => a != b,
        _ => false,
    }
}

/// Simulates the chain for `horizon` time units after a discarded warm-up
/// of one batch length, split into `batches` equal batches.
pub fn simulate_chain(spec: &ChainSpec, horizon: f64, batches: usize, seed: u64, record_path: bool) -> ChainRun {
    let gen = spec.generator();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch_len = horizon / batches as f64;
    let mut state = StateId::Active { users: 1, source_on: true }.index(spec);
    let mut t = -batch_len;
    let mut occupancy = vec![vec![0.0; gen.n]; batches];
    let mut switches = vec![0u64; batches];
    let mut path = record_path.then(|| ChainPath {
        jumps: vec![(0.0, state)],
        arrivals: Vec::new(),
        horizon,
    });
    let batch_of = |t: f64| ((t / batch_len) as usize).min(batches - 1);

    while t < horizon {
        let exit = gen.exit[state];
        let hold = if exit > 0.0 { Exp::new(exit).unwrap().sample(&mut rng) } else { f64::INFINITY };
        let end = (t + hold).min(horizon);
        // Spread the holding time over the batches it covers.
        let mut from = t.max(0.0);
        while from < end {
            let b = batch_of(from);
            let to = end.min((b + 1) as f64 * batch_len);
            occupancy[b][state] += to - from;
            if to <= from {
                break;
            }
            from = to;
        }
        t += hold;
        if t >= horizon {
            break;
        }
        let mut pick = rng.random::<f64>() * exit;
        let mut next = gen.transitions[state].last().map_or(state, |&(s, _)| s);
        for &(s, r) in &gen.transitions[state] {
            if pick < r {
                next = s;
                break;
            }
            pick -= r;
        }
        let (a, b) = (StateId::from_index(state), StateId::from_index(next));
        if t >= 0.0 {
            if is_switch(a, b) {
                switches[batch_of(t)] += 1;
            }
            if let Some(p) = path.as_mut() {
                p.jumps.push((t, next));
                let arrival = match (a, b) {
                    (StateId::Sleep { source_on: true, .. }, StateId::Active { .. }) => true,
                    (StateId::Active { users: m, .. }, StateId::Active { users: n, .. }) => n == m + 1,
                    _ => false,
                };
                if arrival {
                    p.arrivals.push(t);
                }
            }
        } else if let Some(p) = path.as_mut() {
            p.jumps[0].1 = next;
        }
        state = next;
    }
    for b in occupancy.iter_mut() {
        b.iter_mut().for_each(|x| *x /= batch_len);
    }
    ChainRun {
        horizon,
        batch_occupancy: occupancy,
        batch_switch_rate: switches.iter().map(|&c| c as f64 / batch_len).collect(),
        path,
    }
}

fn bs_mode(state: StateId) -> BsMode {
    match state {
        StateId::Sleep { mode: 0, .. } => BsMode::Fm(FmState::Sm1),
        StateId::Sleep { mode: 1, .. } => BsMode::Sm2,
        StateId::Sleep { .. } => BsMode::Sm3,
        StateId::Active { .. } => BsMode::Fm(FmState::Serving),
    }
}

impl ChainPath {
    /// Renders the trajectory as a simulator-style timeline plus the arrival
    /// stream and source ON periods that produced it.
    pub fn to_observation(&self, tick_seconds: f64, l_max: u32) -> (SleepTimeline, ArrivalStream) {
        let mut tl = SleepTimeline::new(tick_seconds, l_max);
        let mut on = Vec::new();
        let to_tick = |t: f64| (t / tick_seconds).round() as u64;
        for (k, &(start, s)) in self.jumps.iter().enumerate() {
            let end = self.jumps.get(k + 1).map_or(self.horizon, |j| j.0);
            let state = StateId::from_index(s);
            let source_on = matches!(state, StateId::Sleep { source_on: true, .. } | StateId::Active { source_on: true, .. });
            if source_on {
                match on.last_mut() {
                    Some((_, e)) if *e == start => *e = end,
                    _ => on.push((start, end)),
                }
            }
            let (a, b) = (to_tick(start).max(tl.horizon_ticks()), to_tick(end));
            if b <= a {
                continue;
            }
            let mode = bs_mode(state);
            let load = if matches!(state, StateId::Active { .. }) { b - a } else { 0 };
            match tl.intervals.last_mut() {
                Some(last) if last.mode == mode => {
                    last.end = b;
                    last.load_rb += load;
                }
                _ => {
                    tl.push_window(a, b, mode, None);
                    tl.intervals.last_mut().unwrap().load_rb = load;
                }
            }
        }
        let stream = ArrivalStream {
            arrivals: self.arrivals.iter().map(|&time| Arrival { time, demand: 0.0 }).collect(),
            on_intervals: on,
            duration: self.horizon,
            seed: 0,
        };
        (tl, stream)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::twin::solve::solve_spec;

    #[test]
    fn occupancy_tracks_steady_state() {
        let mut spec = ChainSpec::calibrated(4.0);
        spec.inter_sm[0][2] = 0.4;
        let (spec, ss) = solve_spec(&spec).unwrap();
        let run = simulate_chain(&spec, 20_000.0, 50, 7, false);
        let sleep = |s: usize| s < 6;
        let (est, err) = run.occupancy(sleep);
        let exact: f64 = ss.nu.iter().flatten().sum();
        assert!((est - exact).abs() < 4.0 * err, "{est} {exact} {err}");
        let totals: f64 = run.batch_occupancy[3].iter().sum();
        assert!((totals - 1.0).abs() < 1e-9);
    }

    #[test]
    fn observation_is_a_partition() {
        let spec = ChainSpec::calibrated(3.0);
        let run = simulate_chain(&spec, 200.0, 4, 3, true);
        let path = run.path.unwrap();
        let (tl, stream) = path.to_observation(1e-3, 100);
        assert!(tl.is_partition());
        assert_eq!(tl.horizon_ticks(), 200_000);
        assert!(!stream.arrivals.is_empty());
        assert!(stream.on_intervals.windows(2).all(|w| w[0].1 < w[1].0));
    }
}
