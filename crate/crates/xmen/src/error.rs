//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong while building models, encoding
/// constraints, sampling, or training.
#[derive(Debug, Error)]
pub enum Error {
    /// A model, feature map, or configuration value is malformed.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data (demonstrations, parameter vectors, ...) violates a
    /// documented precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// The constraint set admits no trajectory at all. This is distinct
    /// from a sampling failure: retrying cannot help.
    #[error("constraint set is infeasible: no trajectory satisfies it")]
    Infeasible,

    /// A constraint set or MDP cannot be compiled into the requested
    /// binary encoding.
    #[error("encoding error: {0}")]
    Encoding(String),

    /// A satisfying assignment does not correspond to any trajectory.
    #[error("decode error: {0}")]
    Decode(String),

    /// Exhaustive enumeration hit its trajectory cap.
    #[error("enumeration exceeded the cap of {cap} trajectories")]
    EnumerationOverflow { cap: usize },

    /// The ratio gradient estimator received a batch whose denominator
    /// sum is zero.
    #[error("degenerate sample batch: denominator weight sum is zero")]
    DegenerateBatch,

    /// A sampling run exceeded its failure budget and was aborted.
    #[error("sampling aborted: {0}")]
    Sampling(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
