use serde::{Deserialize, Serialize};

use crate::sim::timeline::{BsMode, FmState, SleepTimeline};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunFit {
    pub run: u64,
    pub n_sm3: u64,
    pub n_sm2: u64,
    pub n_sm1: u64,
    pub residual: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObsSchedule {
    pub runs: Vec<RunFit>,
    /// Mode counts over all runs, SM1 first.
    pub totals: [u64; 3],
}

/// Greedy deepest-first fill of each zero-load run with windows
/// `windows = (sm1, sm2, sm3)` ticks.
pub fn obs_fit(zero_runs: &[u64], windows: [u64; 3]) -> ObsSchedule {
    let mut schedule = ObsSchedule::default();
    for &run in zero_runs {
        let n_sm3 = run / windows[2];
        let rest = run - n_sm3 * windows[2];
        let n_sm2 = rest / windows[1];
        let rest = rest - n_sm2 * windows[1];
        let n_sm1 = rest / windows[0];
        let residual = rest - n_sm1 * windows[0];
        schedule.totals[0] += n_sm1;
        schedule.totals[1] += n_sm2;
        schedule.totals[2] += n_sm3;
        schedule.runs.push(RunFit { run, n_sm3, n_sm2, n_sm1, residual });
    }
    schedule
}

/// Rewrites the timeline of a never-sleeping run so that every zero-load
/// run is filled by the greedy schedule. Serving ticks are untouched, so no
/// user is delayed.
pub fn obs_timeline(reference: &SleepTimeline, windows: [u64; 3]) -> (SleepTimeline, ObsSchedule) {
    let mut out = SleepTimeline::new(reference.tick_seconds, reference.l_max);
    out.served_users = reference.served_users;
    let mut runs = Vec::new();
    let mut run_start = None;

    let flush = |out: &mut SleepTimeline, start: u64, end: u64, runs: &mut Vec<u64>| {
        let fit = obs_fit(&[end - start], windows).runs[0];
        runs.push(end - start);
        let mut t = start;
        for _ in 0..fit.n_sm3 {
            out.push_window(t, t + windows[2], BsMode::Sm3, None);
            t += windows[2];
        }
        for _ in 0..fit.n_sm2 {
            out.push_window(t, t + windows[1], BsMode::Sm2, None);
            t += windows[1];
        }
        for _ in 0..fit.n_sm1 * windows[0] + fit.residual {
            out.push_fm_tick(t, FmState::Sm1, 0);
            t += 1;
        }
    };

    for iv in &reference.intervals {
        if iv.load_rb == 0 {
            run_start.get_or_insert(iv.start);
            continue;
        }
        if let Some(s) = run_start.take() {
            flush(&mut out, s, iv.start, &mut runs);
        }
        out.intervals.push(*iv);
        if let Some(prev) = out.intervals.len().checked_sub(2).map(|i| out.intervals[i].mode.operating()) {
            if prev != iv.mode.operating() {
                out.switch_events.push(crate::sim::timeline::SwitchEvent {
                    tick: iv.start,
                    from: prev,
                    to: iv.mode.operating(),
                });
            }
        }
    }
    if let Some(s) = run_start {
        flush(&mut out, s, reference.horizon_ticks(), &mut runs);
    }
    (out, obs_fit(&runs, windows))
}
