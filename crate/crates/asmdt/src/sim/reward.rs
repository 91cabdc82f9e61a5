use serde::{Deserialize, Serialize};

use crate::power::{normalized_saving, OperatingMode, PowerModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    /// Weight on the delay term; 0 cares only about power.
    pub alpha: f64,
    pub l_max: u32,
    /// Committed window of each action (FM, SM2, SM3) in ticks.
    pub windows: [u64; 3],
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            l_max: 100,
            windows: [1, 14, 140],
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = (0.0..=1.0).contains(&self.alpha)
            && self.l_max > 0
            && self.windows[0] >= 1
            && self.windows[0] < self.windows[1]
            && self.windows[1] < self.windows[2];
        if ok {
            Ok(())
        } else {
            Err(crate::Error::InvalidParameter(format!("invalid reward weights {self:?}")))
        }
    }
}

pub fn reward_power(mode: OperatingMode, model: &PowerModel) -> f64 {
    normalized_saving(model, model.instantaneous_power(mode, 0.0))
}

/// Penalty for delayed load, or credit for load served without delay.
pub fn reward_delay(delayed_rb: u32, served_rb: u32, l_max: u32) -> f64 {
    if delayed_rb > 0 {
        -(delayed_rb.min(l_max) as f64) / l_max as f64
    } else if served_rb > 0 {
        served_rb.min(l_max) as f64 / l_max as f64
    } else {
        0.0
    }
}

pub fn total_reward(power_terms: &[f64], delay_terms: &[f64], alpha: f64, action_changed: bool) -> f64 {
    assert_eq!(power_terms.len(), delay_terms.len());
    assert!(!power_terms.is_empty());
    let mut acc = WindowReward::new(alpha);
    for (&p, &d) in power_terms.iter().zip(delay_terms) {
        acc.push(p, d);
    }
    acc.finish(action_changed)
}

/// Running form of the windowed reward.
#[derive(Debug, Clone, Copy)]
pub struct WindowReward {
    alpha: f64,
    sum: f64,
    n: u64,
}

impl WindowReward {
    pub fn new(alpha: f64) -> Self {
        Self { alpha, sum: 0.0, n: 0 }
    }

    pub fn push(&mut self, power_term: f64, delay_term: f64) {
        self.sum += (1.0 - self.alpha) * power_term + self.alpha * delay_term;
        self.n += 1;
    }

    pub fn finish(&self, action_changed: bool) -> f64 {
        let n = self.n.max(1) as f64;
        let penalty = if action_changed { 1.0 / n } else { 0.0 };
        self.sum / n - penalty
    }
}
