//! Continuous-time Markov digital twin of the sleeping base station.
//!
//! States are `S(i, j)` (asleep in SM_i with the source ON or OFF) and
//! `A(m, j)` (awake with m users). The stationary law yields the sleeping
//! probability, expected users arriving into sleep, the risk of decision
//! making and the switching frequency.

mod chain;
mod estimate;
mod gillespie;
mod metrics;
mod solve;

pub use chain::{ChainSpec, ExitRule, Generator, StateId};
pub use estimate::{estimate_params, ParamUpdate};
pub use gillespie::{simulate_chain, ChainPath, ChainRun};
pub use metrics::{evaluate, rdm, sleeping_probability, switching_frequency, RdmReport};
pub use solve::{
    solve_spec, stationary_dense, stationary_power, steady_state, steady_state_power, SteadyState, TAIL_TOLERANCE,
};
