//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Raw quaternion norm below 1e-12; no rotation can be recovered.
    #[error("degenerate rotation: raw quaternion norm {norm:.3e} below 1e-12")]
    DegenerateRotation { norm: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("timestamp {t} outside [0, {t_end})")]
    TimestampOutOfRange { t: f64, t_end: f64 },

    /// 2x2 covariance not invertible even after diagonal regularization.
    /// Should be unreachable for finite inputs.
    #[error("singular 2x2 covariance after regularization (det = {det:.3e})")]
    SingularCovariance { det: f64 },

    #[error("image {width}x{height} smaller than the 11x11 ssim window")]
    ImageTooSmallForSsim { width: usize, height: usize },

    #[error("non-finite loss at iteration {iteration} (t = {t}, view = {view}, group = {group})")]
    NonFiniteLoss {
        iteration: u64,
        t: u32,
        view: usize,
        group: String,
    },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
