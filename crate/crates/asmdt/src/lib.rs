//! Advanced sleep mode management for a capacity base station.
//!
//! The crate bundles a bursty traffic model, a symbol-level simulator of
//! the sleeping base station, a family of sleep policies (including a
//! replay-trained recurrent Q-agent), a continuous-time Markov digital twin
//! that predicts the risk of sleeping decisions, and the risk gate that
//! consumes those predictions.

pub mod error;
pub mod experiment;
pub mod policy;
pub mod power;
pub mod risk;
pub mod sim;
pub mod threshold;
pub mod traffic;
pub mod twin;

pub use error::{Error, Result};
