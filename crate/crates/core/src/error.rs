use thiserror::Error;

pub type Result<T> = std::result::Result<T, AstgiError>;

#[derive(Debug, Error)]
pub enum AstgiError {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("softmax over an empty neighborhood")]
    EmptyNeighborhood,

    #[error("empty query set")]
    EmptyQuery,

    #[error("sample `{series_id}` has an empty history")]
    EmptyHistory { series_id: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl AstgiError {
    /// Short machine-readable tag used by the CLI error document.
    pub fn kind(&self) -> &'static str {
        match self {
            AstgiError::Dimension { .. } => "dimension",
            AstgiError::EmptyNeighborhood => "empty_neighborhood",
            AstgiError::EmptyQuery => "empty_query",
            AstgiError::EmptyHistory { .. } => "empty_history",
            AstgiError::Contract(_) => "contract",
            AstgiError::Parse { .. } => "parse",
            AstgiError::Validation(_) => "validation",
            AstgiError::NonFinite(_) => "non_finite",
            AstgiError::Divergence { .. } => "divergence",
            AstgiError::Io(_) => "io",
            AstgiError::Json(_) => "json",
            AstgiError::Csv(_) => "csv",
        }
    }
}
