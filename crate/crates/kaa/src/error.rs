use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation
    /// (collision point, rho < 1 where a real trajectory is required, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// `(eta, branch)` pair inconsistent with the requested fold branch.
    #[error("branch error: {0}")]
    Branch(String),

    /// Finite-difference step too small to resolve.
    #[error("step underflow: {0}")]
    StepUnderflow(String),

    /// Root solve or fit failed to reach its tolerance.
    #[error("convergence failure: {0}")]
    Convergence(String),

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Not enough history for a windowed estimator.
    #[error("window too short: {0}")]
    WindowTooShort(String),

    /// Mid-run failure (particle at singularity, I/O, ...).
    #[error("run error: {0}")]
    Run(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
