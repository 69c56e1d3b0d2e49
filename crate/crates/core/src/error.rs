use thiserror::Error;

/// Errors produced while building, fitting or post-processing a model.
#[derive(Debug, Error)]
pub enum FpcaError {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate message: {0}")]
    Degenerate(String),

    #[error("degenerate message on edge {edge} at iteration {iteration}: {reason}")]
    DegenerateEdge {
        edge: String,
        iteration: usize,
        reason: String,
    },

    #[error("message store has no entry for {0}")]
    MissingMessage(String),

    #[error("message basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("eigenfunction matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("degenerate principal component {component}: {reason}")]
    DegenerateComponent { component: usize, reason: String },

    #[error("sign of component {0} is ambiguous (zero inner product with reference)")]
    AmbiguousSign(usize),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FpcaError>;
