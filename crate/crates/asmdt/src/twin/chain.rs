use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the sleep-exit rates follow from the ON arrival rate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum ExitRule {
    /// The first arrival ends the sleep.
    #[default]
    Arrival,
    /// The first arrival plus the mode's wake-up time, `1/(1/λ + D_i)`.
    ArrivalPlusWakeup { durations: [f64; 3] },
}

impl ExitRule {
    pub fn rates(&self, lambda: f64) -> [f64; 3] {
        match self {
            ExitRule::Arrival => [lambda; 3],
            ExitRule::ArrivalPlusWakeup { durations } => {
                durations.map(|d| if lambda > 0.0 { 1.0 / (1.0 / lambda + d) } else { 0.0 })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainSpec {
    /// Truncation of the active chain (users).
    pub max_users: usize,
    pub lambda: f64,
    pub tau: f64,
    pub zeta: f64,
    pub mu: f64,
    /// Sleep-exit rate out of each SM_i while the source is ON.
    pub exit_rates: [f64; 3],
    /// Share of service completions that enter each SM_i.
    pub entry_split: [f64; 3],
    /// OFF-phase rates between sleep modes; the diagonal is ignored.
    pub inter_sm: [[f64; 3]; 3],
}

impl Default for ChainSpec {
    fn default() -> Self {
        Self::calibrated(1.0)
    }
}

impl ChainSpec {
    /// Default twin around ON arrival rate `lambda`: τ = 0.1, ζ = 0.5,
    /// μ = 10, uniform SM entry, arrival-triggered exit, no SM hopping.
    pub fn calibrated(lambda: f64) -> Self {
        Self {
            max_users: 50,
            lambda,
            tau: 0.1,
            zeta: 0.5,
            mu: 10.0,
            exit_rates: [lambda; 3],
            entry_split: [1.0 / 3.0; 3],
            inter_sm: [[0.0; 3]; 3],
        }
    }

    pub fn with_lambda(&self, lambda: f64, rule: ExitRule) -> Self {
        Self {
            lambda,
            exit_rates: rule.rates(lambda),
            ..self.clone()
        }
    }

    pub fn state_count(&self) -> usize {
        6 + 2 * self.max_users
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.lambda, self.tau, self.zeta, self.mu]
            .into_iter()
            .chain(self.exit_rates)
            .chain(self.entry_split)
            .chain(self.inter_sm.iter().flatten().copied());
        if rates.clone().any(|r| !(r >= 0.0) || !r.is_finite()) {
            return Err(Error::InvalidParameter("chain rates must be finite and non-negative".into()));
        }
        if self.max_users < 1 {
            return Err(Error::InvalidParameter("max_users must be at least 1".into()));
        }
        let split: f64 = self.entry_split.iter().sum();
        if (split - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("entry split sums to {split}, not 1")));
        }
        Ok(())
    }

    pub fn entry_rate(&self, mode: usize) -> f64 {
        self.mu * self.entry_split[mode]
    }

    pub fn generator(&self) -> Generator {
        let mut g = Generator::new(self.state_count());
        let on = 0;
        let off = 1;
        for i in 0..3 {
            let s_on = StateId::Sleep { mode: i, source_on: true }.index(self);
            let s_off = StateId::Sleep { mode: i, source_on: false }.index(self);
            g.add(s_on, s_off, self.zeta);
            g.add(s_off, s_on, self.tau);
            g.add(s_on, StateId::Active { users: 1, source_on: true }.index(self), self.exit_rates[i]);
            for k in 0..3 {
                if k != i {
                    g.add(s_off, StateId::Sleep { mode: k, source_on: false }.index(self), self.inter_sm[i][k]);
                }
            }
        }
        for m in 1..=self.max_users {
            for j in [on, off] {
                let here = StateId::Active { users: m, source_on: j == on }.index(self);
                let flipped = StateId::Active { users: m, source_on: j != on }.index(self);
                g.add(here, flipped, if j == on { self.zeta } else { self.tau });
                if j == on && m < self.max_users {
                    g.add(here, StateId::Active { users: m + 1, source_on: true }.index(self), self.lambda);
                }
                if m >= 2 {
                    g.add(here, StateId::Active { users: m - 1, source_on: j == on }.index(self), self.mu);
                } else {
                    for i in 0..3 {
                        g.add(here, StateId::Sleep { mode: i, source_on: j == on }.index(self), self.entry_rate(i));
                    }
                }
            }
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StateId {
    Sleep { mode: usize, source_on: bool },
    Active { users: usize, source_on: bool },
}

impl StateId {
    pub fn index(self, spec: &ChainSpec) -> usize {
        match self {
            StateId::Sleep { mode, source_on } => 2 * mode + usize::from(!source_on),
            StateId::Active { users, source_on } => {
                debug_assert!(users >= 1 && users <= spec.max_users);
                6 + 2 * (users - 1) + usize::from(!source_on)
            }
        }
    }

    pub fn from_index(idx: usize) -> Self {
        let source_on = idx % 2 == 0;
        if idx < 6 {
            StateId::Sleep { mode: idx / 2, source_on }
        } else {
            StateId::Active { users: (idx - 6) / 2 + 1, source_on }
        }
    }
}

/// Sparse rate matrix: off-diagonal transitions plus total exit rates.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub n: usize,
    pub transitions: Vec<Vec<(usize, f64)>>,
    pub exit: Vec<f64>,
}

impl Generator {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            transitions: vec![Vec::new(); n],
            exit: vec![0.0; n],
        }
    }

    pub fn add(&mut self, from: usize, to: usize, rate: f64) {
        if rate > 0.0 && from != to {
            self.transitions[from].push((to, rate));
            self.exit[from] += rate;
        }
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        if from == to {
            return -self.exit[from];
        }
        self.transitions[from].iter().filter(|(t, _)| *t == to).map(|(_, r)| r).sum()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut q = nalgebra::DMatrix::zeros(self.n, self.n);
        for (i, row) in self.transitions.iter().enumerate() {
            for &(j, r) in row {
                q[(i, j)] += r;
            }
            q[(i, i)] = -self.exit[i];
        }
        q
    }

    /// Largest |(xQ)_j| over states.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let mut flow = vec![0.0; self.n];
        for (i, row) in self.transitions.iter().enumerate() {
            flow[i] -= x[i] * self.exit[i];
            for &(j, r) in row {
                flow[j] += x[i] * r;
            }
        }
        flow.iter().fold(0.0, |m, f| m.max(f.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_sum_to_zero() {
        let mut spec = ChainSpec::calibrated(4.0);
        spec.inter_sm[0][2] = 0.3;
        spec.max_users = 7;
        let q = spec.generator().to_dense();
        assert_eq!(q.nrows(), 6 + 2 * 7);
        for i in 0..q.nrows() {
            assert!(q.row(i).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn no_hops_without_inter_sm_rates() {
        let spec = ChainSpec::calibrated(2.0);
        let g = spec.generator();
        for i in 0..3 {
            for k in 0..3 {
                let a = StateId::Sleep { mode: i, source_on: false }.index(&spec);
                let b = StateId::Sleep { mode: k, source_on: false }.index(&spec);
                if i != k {
                    assert_eq!(g.rate(a, b), 0.0);
                }
            }
        }
    }

    #[test]
    fn index_round_trip() {
        let spec = ChainSpec::calibrated(1.0);
        for idx in 0..spec.state_count() {
            assert_eq!(StateId::from_index(idx).index(&spec), idx);
        }
    }

    #[test]
    fn wakeup_exit_rates() {
        let r = ExitRule::ArrivalPlusWakeup { durations: [0.0, 0.001, 0.01] }.rates(10.0);
        assert_eq!(r[0], 10.0);
        assert!((r[2] - 1.0 / 0.11).abs() < 1e-12);
    }

    #[test]
    fn split_must_sum_to_one() {
        let mut spec = ChainSpec::calibrated(1.0);
        spec.entry_split = [0.5, 0.2, 0.2];
        assert!(spec.validate().is_err());
    }
}
