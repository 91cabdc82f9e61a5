use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no usable samples in trace")]
    NoUsableSamples,

    #[error("infeasible fit: dispersion ratio {dispersion:.6} does not exceed {bound:.6}")]
    Infeasible { dispersion: f64, bound: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("chain not irreducible")]
    NotIrreducible,

    #[error("no sleeping mass")]
    NoSleepingMass,

    #[error("truncation tail mass {tail:e} above tolerance at M = {max_users}")]
    Truncation { tail: f64, max_users: usize },

    #[error("overlapping timeline intervals at tick {0}")]
    OverlappingIntervals(u64),

    #[error("training diverged at episode {episode}: loss {loss}")]
    Diverged { episode: usize, loss: f64 },

    #[error("sequence length {got} does not match configured {expected}")]
    SequenceLength { expected: usize, got: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
