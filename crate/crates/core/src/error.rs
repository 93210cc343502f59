//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an operation's arguments was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Tensor or image shapes do not line up.
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    /// A diffusion step was requested at a timestep where the clean-signal
    /// estimate is undefined (alpha = 0).
    #[error("singular timestep t={t}: alpha is zero, clean estimate undefined")]
    SingularTimestep { t: usize },

    /// A region-restricted metric has no pixels or keypoint pairs to work
    /// with. Callers tally these frames and keep going.
    #[error("region undefined: {0}")]
    RegionUndefined(String),

    /// Training produced a non-finite loss; the run aborts with diagnostics.
    #[error("non-finite loss at step {step}: mse={mse}, racl={racl}")]
    NonFiniteLoss { step: usize, mse: f64, racl: f64 },

    /// A checkpoint or manifest file did not match the expected schema.
    #[error("bad file format: {0}")]
    BadFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            expected: expected.into(),
            got: got.into(),
        }
    }
}
