use serde::{Deserialize, Serialize};

use super::chain::ChainSpec;
use super::solve::{solve_spec, SteadyState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdmReport {
    pub v_sleep: f64,
    pub u_sleep: f64,
    pub rdm: f64,
    pub f_m: f64,
    /// Evaluation window `[start, end)` in seconds, when tied to one.
    pub window: Option<(f64, f64)>,
}

pub fn sleeping_probability(ss: &SteadyState) -> f64 {
    ss.nu.iter().flatten().sum()
}

/// Sleep entries and exits (twice the entry flow out of the first active
/// level) plus OFF-phase hops between sleep modes.
pub fn switching_frequency(ss: &SteadyState, spec: &ChainSpec) -> f64 {
    let first = ss.u.first().map_or(0.0, |r| r[0] + r[1]);
    let split: f64 = spec.entry_split.iter().sum();
    let hops: f64 = (0..3)
        .map(|i| {
            let out: f64 = (0..3).filter(|&k| k != i).map(|k| spec.inter_sm[i][k]).sum();
            ss.nu[i][1] * out
        })
        .sum();
    2.0 * spec.mu * first * split + hops
}

/// Expected arrivals into sleep per unit time and its ratio to the
/// sleeping probability. `u_sleep` is stored as `rdm * v_sleep` so the
/// identity holds bit for bit.
pub fn rdm(ss: &SteadyState, lambda: f64, f_m: f64) -> Result<RdmReport> {
    let v_sleep = sleeping_probability(ss);
    if !(v_sleep > 0.0) {
        return Err(Error::NoSleepingMass);
    }
    let users = lambda * ss.nu.iter().map(|r| r[0]).sum::<f64>();
    let rdm = users / v_sleep;
    Ok(RdmReport {
        v_sleep,
        u_sleep: rdm * v_sleep,
        rdm,
        f_m,
        window: None,
    })
}

/// Solves the spec and reports every twin metric.
pub fn evaluate(spec: &ChainSpec) -> Result<RdmReport> {
    let (used, ss) = solve_spec(spec)?;
    rdm(&ss, used.lambda, switching_frequency(&ss, &used))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(nu: [[f64; 2]; 3], u: Vec<[f64; 2]>) -> SteadyState {
        SteadyState { nu, u, residual: 0.0 }
    }

    #[test]
    fn sleeping_probability_edges() {
        assert_eq!(sleeping_probability(&state([[0.0; 2]; 3], vec![[0.5, 0.5]])), 0.0);
        let v = sleeping_probability(&state([[1.0 / 6.0; 2]; 3], vec![[0.0; 2]]));
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rdm_examples() {
        let ss = state([[0.25, 0.0], [0.0, 0.25], [0.0; 2]], vec![[0.5, 0.0]]);
        let r = rdm(&ss, 4.0, 0.0).unwrap();
        assert_eq!(r.u_sleep, 1.0);
        assert_eq!(r.v_sleep, 0.5);
        assert_eq!(r.rdm, 2.0);
        let off_only = state([[0.0, 0.3], [0.0; 2], [0.0; 2]], vec![[0.7, 0.0]]);
        assert_eq!(rdm(&off_only, 4.0, 0.0).unwrap().rdm, 0.0);
        let awake = state([[0.0; 2]; 3], vec![[1.0, 0.0]]);
        assert!(matches!(rdm(&awake, 4.0, 0.0), Err(Error::NoSleepingMass)));
    }

    #[test]
    fn switching_terms() {
        let mut spec = ChainSpec::calibrated(1.0);
        let ss = state([[0.1, 0.2], [0.1, 0.2], [0.1, 0.3]], vec![[0.0, 0.0]]);
        assert_eq!(switching_frequency(&ss, &spec), 0.0);
        spec.inter_sm = [[0.0, 0.5, 0.1], [0.2, 0.0, 0.0], [0.0, 0.3, 0.0]];
        let once = switching_frequency(&ss, &spec);
        spec.inter_sm.iter_mut().flatten().for_each(|r| *r *= 2.0);
        assert!((switching_frequency(&ss, &spec) - 2.0 * once).abs() < 1e-15);
    }

    #[test]
    fn sleeping_falls_with_arrival_rate() {
        let mut last = f64::INFINITY;
        for k in 1..=10 {
            let v = evaluate(&ChainSpec::calibrated(k as f64)).unwrap().v_sleep;
            assert!(v < last);
            last = v;
        }
    }
}
