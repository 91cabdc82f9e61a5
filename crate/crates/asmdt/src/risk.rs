//! Risk gate: compares the measured and predicted risk of sleeping every
//! evaluation window and switches the sleep modes off, schedules
//! retraining, or switches them back on after a quiet period.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::sim::{Action, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateStatus {
    Active,
    Deactivated,
    DeactivatedPendingRetrain,
    Monitoring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateAction {
    Deactivate,
    DeactivateRetrain,
    Monitor,
    Activate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    /// Operator risk threshold.
    pub threshold: f64,
    /// Quiet time needed before reactivation, seconds.
    pub quiet_window: f64,
    /// Moving-average span, in evaluation windows.
    pub smoothing_span: usize,
    /// Evaluation window length, seconds.
    pub eval_window: f64,
    /// Standard errors by which the measured risk must exceed the
    /// prediction before retraining is scheduled.
    pub retrain_z: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            threshold: 1.2,
            quiet_window: 10.0,
            smoothing_span: 5,
            eval_window: 1.0,
            retrain_z: 3.0,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold >= 0.0) || !(self.quiet_window >= 0.0) || !(self.eval_window > 0.0) || !(self.retrain_z >= 0.0) {
            return Err(Error::InvalidParameter("gate threshold, windows and z must be non-negative".into()));
        }
        if self.smoothing_span == 0 {
            return Err(Error::InvalidParameter("smoothing span must be at least 1".into()));
        }
        Ok(())
    }
}

/// Measured risk over one window. `value` is `None` when the BS never
/// slept, in which case the window counts as below threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActualRdm {
    pub value: Option<f64>,
    pub std_err: f64,
}

impl ActualRdm {
    pub fn exact(value: f64) -> Self {
        Self { value: Some(value), std_err: 0.0 }
    }
}

/// Delayed users per second divided by the fraction of the window spent
/// asleep. The standard error treats the count as Poisson.
pub fn rdm_actual(delayed_users: u64, window_seconds: f64, sleep_fraction: f64) -> Result<ActualRdm> {
    if !(sleep_fraction > 0.0) {
        return Err(Error::NoSleepingMass);
    }
    let scale = window_seconds * sleep_fraction;
    Ok(ActualRdm {
        value: Some(delayed_users as f64 / scale),
        std_err: (delayed_users as f64).sqrt() / scale,
    })
}

/// Trailing simple moving average; early outputs average the prefix.
pub fn smooth(series: &[f64], span: usize) -> Vec<f64> {
    assert!(span >= 1, "span must be at least 1");
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for (i, &x) in series.iter().enumerate() {
        sum += x;
        if i >= span {
            sum -= series[i - span];
        }
        out.push(sum / (i + 1).min(span) as f64);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateState {
    pub status: GateStatus,
    pub quiet_clock: f64,
    pub config: GateConfig,
    /// Recent measured risk values, newest last, at most one span long.
    pub history: Vec<f64>,
}

impl GateState {
    pub fn new(config: GateConfig) -> Self {
        Self {
            status: GateStatus::Active,
            quiet_clock: 0.0,
            config,
            history: Vec::new(),
        }
    }

    pub fn sleep_allowed(&self) -> bool {
        self.status == GateStatus::Active
    }

    pub fn smoothed(&self) -> f64 {
        if self.history.is_empty() {
            0.0
        } else {
            self.history.iter().sum::<f64>() / self.history.len() as f64
        }
    }

    /// One evaluation window. Branches are checked in order: either risk
    /// above threshold, then measured risk significantly above the
    /// prediction, then the quiet-period monitor.
    pub fn decide(&self, actual: ActualRdm, rdm_dt: f64, elapsed: f64) -> (GateState, GateAction) {
        let cfg = self.config;
        let mut next = self.clone();
        next.history.push(actual.value.unwrap_or(0.0));
        if next.history.len() > cfg.smoothing_span {
            next.history.remove(0);
        }
        let rdm_a = next.smoothed();
        let noise = actual.std_err / (next.history.len() as f64).sqrt();

        let action = if rdm_a > cfg.threshold || rdm_dt > cfg.threshold {
            next.status = GateStatus::Deactivated;
            GateAction::Deactivate
        } else if rdm_a > rdm_dt + cfg.retrain_z * noise {
            next.status = GateStatus::DeactivatedPendingRetrain;
            GateAction::DeactivateRetrain
        } else {
            GateAction::Monitor
        };
        if action != GateAction::Monitor {
            next.quiet_clock = 0.0;
            return (next, action);
        }

        next.quiet_clock += elapsed;
        if self.status == GateStatus::Active {
            return (next, GateAction::Monitor);
        }
        if next.quiet_clock >= cfg.quiet_window {
            next.status = GateStatus::Active;
            next.quiet_clock = 0.0;
            (next, GateAction::Activate)
        } else {
            next.status = GateStatus::Monitoring;
            (next, GateAction::Monitor)
        }
    }
}

/// One line of the gate log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub time: f64,
    pub rdm_a: Option<f64>,
    pub rdm_dt: f64,
    pub status: GateStatus,
    pub action: GateAction,
}

/// Wraps a policy and forces FM whenever the gate has sleep switched off.
#[derive(Debug, Clone)]
pub struct GatedPolicy<P> {
    pub inner: P,
    pub sleep_allowed: bool,
}

impl<P: Policy> GatedPolicy<P> {
    pub fn new(inner: P) -> Self {
        Self { inner, sleep_allowed: true }
    }
}

impl<P: Policy> Policy for GatedPolicy<P> {
    fn name(&self) -> String {
        format!("gated_{}", self.inner.name())
    }

    fn act(&mut self, obs: &Observation) -> Action {
        let a = self.inner.act(obs);
        if self.sleep_allowed {
            a
        } else {
            Action::Fm
        }
    }

    fn reset(&mut self) {
        self.inner.reset();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gate() -> GateState {
        GateState::new(GateConfig::default())
    }

    #[test]
    fn actual_rdm_examples() {
        assert_eq!(rdm_actual(2, 1.0, 0.5).unwrap().value, Some(4.0));
        assert_eq!(rdm_actual(0, 1.0, 0.5).unwrap().value, Some(0.0));
        assert!(matches!(rdm_actual(3, 1.0, 0.0), Err(Error::NoSleepingMass)));
    }

    #[test]
    fn branch_one_via_prediction() {
        let (s, a) = gate().decide(ActualRdm::exact(0.5), 2.0, 1.0);
        assert_eq!(a, GateAction::Deactivate);
        assert_eq!(s.status, GateStatus::Deactivated);
    }

    #[test]
    fn branch_two_schedules_retraining() {
        let (s, a) = gate().decide(ActualRdm::exact(1.1), 0.7, 1.0);
        assert_eq!(a, GateAction::DeactivateRetrain);
        assert_eq!(s.status, GateStatus::DeactivatedPendingRetrain);
    }

    #[test]
    fn sustained_quiet_reactivates() {
        let mut s = gate().decide(ActualRdm::exact(0.5), 2.0, 1.0).0;
        let mut actions = Vec::new();
        for _ in 0..10 {
            let (n, a) = s.decide(ActualRdm::exact(0.5), 0.6, 1.0);
            s = n;
            actions.push(a);
        }
        assert_eq!(actions[..9], [GateAction::Monitor; 9]);
        assert_eq!(actions[9], GateAction::Activate);
        assert!(s.sleep_allowed());
    }

    #[test]
    fn excursion_resets_the_clock() {
        let mut s = gate().decide(ActualRdm::exact(0.5), 2.0, 1.0).0;
        for _ in 0..8 {
            s = s.decide(ActualRdm::exact(0.1), 0.6, 1.0).0;
        }
        assert_eq!(s.quiet_clock, 8.0);
        s = s.decide(ActualRdm::exact(0.1), 1.5, 1.0).0;
        assert_eq!(s.quiet_clock, 0.0);
        assert_eq!(s.status, GateStatus::Deactivated);
    }

    #[test]
    fn noisy_excess_does_not_retrain() {
        let noisy = ActualRdm { value: Some(0.9), std_err: 0.5 };
        assert_eq!(gate().decide(noisy, 0.7, 1.0).1, GateAction::Monitor);
    }

    #[test]
    fn smoothing_examples() {
        let xs = [1.0, 5.0, 2.0, 8.0];
        assert_eq!(smooth(&xs, 1), xs);
        assert_eq!(smooth(&[3.0; 6], 4), vec![3.0; 6]);
        let step = [0.0, 0.0, 10.0, 10.0, 10.0, 10.0];
        let s = smooth(&step, 3);
        assert_eq!(s[1], 0.0);
        assert!(s[2] < s[3] && s[3] < s[4]);
        assert_eq!(s[4], 10.0);
    }
}
