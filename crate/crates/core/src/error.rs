use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported dtype `{0}` (expected F16, F32 or F64)")]
    UnsupportedDtype(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    /// The global budget cannot be met under the per-projection ceiling.
    #[error(
        "infeasible budget: target sparsity {target} exceeds the reachable maximum {reachable}; \
         smallest feasible clamp is {min_clamp}"
    )]
    Infeasible {
        target: f64,
        reachable: f64,
        min_clamp: f64,
    },

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
