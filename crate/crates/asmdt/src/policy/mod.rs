//! Sleep policies: offline-optimal fitting, fixed baselines, tabular
//! Q-learning and the recurrent deep-Q agent.

pub mod adam;
pub mod dqn;
pub mod lstm;
mod obs;
mod qtable;
pub mod replay;

pub use obs::{obs_fit, obs_timeline, ObsSchedule, RunFit};
pub use qtable::{train_q_table, QPolicy, QTable, QTrainConfig, StateKey};

use crate::sim::{Action, Observation};

pub trait Policy {
    fn name(&self) -> String;
    fn act(&mut self, obs: &Observation) -> Action;
    fn reset(&mut self) {}
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn act(&mut self, obs: &Observation) -> Action {
        (**self).act(obs)
    }
    fn reset(&mut self) {
        (**self).reset()
    }
}

impl<P: Policy + ?Sized> Policy for &mut P {
    fn name(&self) -> String {
        (**self).name()
    }
    fn act(&mut self, obs: &Observation) -> Action {
        (**self).act(obs)
    }
    fn reset(&mut self) {
        (**self).reset()
    }
}

/// Never leaves FM; idle ticks fall into the SM1 sub-state inside the
/// simulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct OnlySm1;

impl Policy for OnlySm1 {
    fn name(&self) -> String {
        "only_sm1".into()
    }
    fn act(&mut self, _obs: &Observation) -> Action {
        Action::Fm
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedAction(pub Action);

impl Policy for FixedAction {
    fn name(&self) -> String {
        format!("fixed_{:?}", self.0).to_lowercase()
    }
    fn act(&mut self, _obs: &Observation) -> Action {
        self.0
    }
}

/// Argmax over action values, preferring the shallower mode on ties.
pub fn greedy_action(values: &[f64; 3]) -> Action {
    let mut best = 0;
    for i in 1..3 {
        if values[i] > values[best] {
            best = i;
        }
    }
    Action::ALL[best]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_and_ties() {
        assert_eq!(greedy_action(&[0.9, 0.1, 0.2]), Action::Fm);
        assert_eq!(greedy_action(&[0.3, 0.3, 0.3]), Action::Fm);
        assert_eq!(greedy_action(&[0.1, 0.5, 0.5]), Action::Sm2);
        assert_eq!(greedy_action(&[0.1, 0.2, 0.5]), Action::Sm3);
        let v = [0.2, 0.7, 0.4];
        assert_eq!(greedy_action(&v), greedy_action(&v.map(|x| x * 3.5)));
    }
}
