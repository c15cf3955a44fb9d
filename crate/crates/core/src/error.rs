//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A domain type was constructed with values violating its invariants.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A linear design whose companion matrix is not Hurwitz was passed to
    /// an operation that requires stability.
    #[error("design is not Hurwitz: {0}")]
    NotHurwitz(String),

    /// The integrator produced a non-finite state. `r_dt` is the product of
    /// the tuning gain and the step size, the usual culprit when the
    /// explicit scheme blows up.
    #[error("non-finite state at step {step} (t = {time:.6}, r*dt = {r_dt:.4}); state = {state:?}")]
    NonFinite {
        step: usize,
        time: f64,
        r_dt: f64,
        state: Vec<f64>,
    },

    /// A path of an ensemble diverged; the seed identifies the path.
    #[error("path with seed {seed} diverged: {source}")]
    PathDiverged {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    /// The tuning parameter lies outside the admissible range.
    #[error("r = {r} is not admissible: {reason}")]
    NotAdmissible { r: f64, reason: String },

    /// A trajectory was combined with a config other than the one that
    /// produced it.
    #[error("config digest mismatch: trajectory has {found}, expected {expected}")]
    DigestMismatch { found: String, expected: String },

    /// Malformed or inconsistent experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
