use serde::{Deserialize, Serialize};

use super::chain::{ChainSpec, ExitRule};
use crate::sim::{BsMode, FmState, SleepTimeline};
use crate::traffic::{baum_welch, bin_counts, ArrivalStream, IppParams, DEFAULT_INTERVAL};

/// A refreshed twin spec plus flags telling which groups of rates were
/// actually re-estimated. A cleared flag means the prior value was kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamUpdate {
    pub spec: ChainSpec,
    pub traffic_updated: bool,
    pub inter_sm_updated: bool,
    pub entry_split_updated: bool,
}

fn sleep_index(mode: BsMode) -> Option<usize> {
    match mode {
        BsMode::Fm(FmState::Sm1) => Some(0),
        BsMode::Sm2 => Some(1),
        BsMode::Sm3 => Some(2),
        BsMode::Fm(_) => None,
    }
}

/// Seconds of `[start, end)` covered by the sorted ON periods.
fn on_overlap(on: &[(f64, f64)], start: f64, end: f64) -> f64 {
    let first = on.partition_point(|iv| iv.1 <= start);
    on[first..]
        .iter()
        .take_while(|iv| iv.0 < end)
        .map(|iv| (iv.1.min(end) - iv.0.max(start)).max(0.0))
        .sum()
}

/// Re-estimates the twin from one observation window. Traffic rates come
/// from Baum-Welch on the binned arrivals, inter-mode rates from observed
/// OFF-phase hops per unit OFF dwell, and the entry split from the sleep
/// modes chosen right after service ends.
pub fn estimate_params(timeline: &SleepTimeline, arrivals: &ArrivalStream, prior: &ChainSpec, rule: ExitRule) -> ParamUpdate {
    let mut spec = prior.clone();
    let mut traffic_updated = false;

    let counts = bin_counts(arrivals, DEFAULT_INTERVAL);
    if arrivals.arrivals.len() >= 2 && counts.len() >= 2 {
        let init = IppParams::new(prior.lambda.max(1e-3), prior.tau.max(1e-3), prior.zeta.max(1e-3), 1.0);
        if let Ok(fit) = baum_welch(&counts, DEFAULT_INTERVAL, &init, 1e-9, 500) {
            let p = fit.params;
            if !fit.lambda_vanished && [p.lambda_on, p.tau, p.zeta].iter().all(|r| r.is_finite() && *r > 0.0) {
                spec.lambda = p.lambda_on;
                spec.tau = p.tau;
                spec.zeta = p.zeta;
                spec.exit_rates = rule.rates(p.lambda_on);
                traffic_updated = true;
            }
        }
    }

    let dt = timeline.tick_seconds;
    let mut hops = [[0u64; 3]; 3];
    let mut off_dwell = [0.0; 3];
    let mut entries = [0u64; 3];
    let mut prev: Option<BsMode> = None;
    for iv in &timeline.intervals {
        let here = sleep_index(iv.mode);
        if let Some(i) = here {
            let (s, e) = (iv.start as f64 * dt, iv.end as f64 * dt);
            off_dwell[i] += (e - s) - on_overlap(&arrivals.on_intervals, s, e);
        }
        match (prev.map(sleep_index), here) {
            (Some(Some(a)), Some(b)) if a != b => hops[a][b] += 1,
            (Some(None), Some(b)) => entries[b] += 1,
            _ => {}
        }
        prev = Some(iv.mode);
    }

    let total_hops: u64 = hops.iter().flatten().sum();
    let inter_sm_updated = total_hops > 0;
    if inter_sm_updated {
        for i in 0..3 {
            if off_dwell[i] <= 0.0 {
                continue;
            }
            for k in 0..3 {
                if k != i {
                    spec.inter_sm[i][k] = hops[i][k] as f64 / off_dwell[i];
                }
            }
        }
    }

    let total_entries: u64 = entries.iter().sum();
    let entry_split_updated = total_entries > 0;
    if entry_split_updated {
        spec.entry_split = entries.map(|c| c as f64 / total_entries as f64);
    }

    ParamUpdate {
        spec,
        traffic_updated,
        inter_sm_updated,
        entry_split_updated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::twin::gillespie::simulate_chain;

    #[test]
    fn empty_window_is_a_no_op() {
        let prior = ChainSpec::calibrated(2.0);
        let tl = SleepTimeline::new(1e-3, 100);
        let up = estimate_params(&tl, &ArrivalStream::empty(0.0), &prior, ExitRule::Arrival);
        assert_eq!(up.spec, prior);
        assert!(!up.traffic_updated && !up.inter_sm_updated && !up.entry_split_updated);
    }

    #[test]
    fn no_hops_keeps_inter_sm_rates() {
        let mut prior = ChainSpec::calibrated(2.0);
        prior.inter_sm[0][1] = 0.25;
        let mut truth = prior.clone();
        truth.inter_sm = [[0.0; 3]; 3];
        let run = simulate_chain(&truth, 500.0, 1, 11, true);
        let (tl, stream) = run.path.unwrap().to_observation(1e-3, 100);
        let up = estimate_params(&tl, &stream, &prior, ExitRule::Arrival);
        assert!(!up.inter_sm_updated);
        assert_eq!(up.spec.inter_sm, prior.inter_sm);
        assert!(up.entry_split_updated);
    }

    #[test]
    fn overlap_counts_partial_periods() {
        let on = [(0.0, 1.0), (2.0, 3.0), (5.0, 9.0)];
        assert!((on_overlap(&on, 0.5, 6.0) - 2.5).abs() < 1e-12);
        assert_eq!(on_overlap(&on, 3.0, 5.0), 0.0);
    }
}
