use thiserror::Error;

pub type Result<T, E = RioError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum RioError {
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numerical failure at token index {index}: {detail}")]
    Numerical { index: usize, detail: String },

    #[error("training diverged at step {step}: loss {loss} exceeded 10x the initial loss {initial} for 50 consecutive steps")]
    Diverged { step: usize, loss: f64, initial: f64 },

    #[error("corpus exhausted: requested {requested} pairs but split `{split}` only has {available} style-disjoint pairs")]
    Exhausted { split: String, requested: usize, available: u128 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("{pool} pool is empty after filtering")]
    EmptyPool { pool: &'static str },

    #[error("no preference pairs qualify: {0}")]
    EmptyPairs(String),

    #[error("enumeration budget exceeded: {needed} joint configurations > budget {budget}")]
    Size { needed: u128, budget: u128 },

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("reports are not comparable: {0}")]
    Incomparable(String),

    #[error("config hash mismatch: {artifact} was produced with {found}, current config is {expected}")]
    ConfigMismatch { artifact: String, found: String, expected: String },

    #[error("invalid artifact {path}: {detail}")]
    Artifact { path: String, detail: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl RioError {
    pub fn precondition(msg: impl Into<String>) -> Self {
        RioError::Precondition(msg.into())
    }

    /// Short category label, used by the CLI for category-coded failures.
    pub fn category(&self) -> &'static str {
        match self {
            RioError::Precondition(_) => "precondition",
            RioError::Numerical { .. } => "numerical",
            RioError::Diverged { .. } => "diverged",
            RioError::Exhausted { .. } => "exhausted",
            RioError::DegenerateInput(_) => "degenerate-input",
            RioError::EmptyPool { .. } => "empty-pool",
            RioError::EmptyPairs(_) => "empty-pairs",
            RioError::Size { .. } => "size",
            RioError::UndefinedRatio(_) => "undefined-ratio",
            RioError::Incomparable(_) => "incomparable",
            RioError::ConfigMismatch { .. } => "config-mismatch",
            RioError::Artifact { .. } => "artifact",
            RioError::Io { .. } => "io",
            RioError::Json(_) => "serialization",
        }
    }

    /// Process exit code for the category.
    pub fn exit_code(&self) -> i32 {
        match self {
            RioError::Precondition(_) => 2,
            RioError::Io { .. } | RioError::Artifact { .. } | RioError::Json(_) => 3,
            RioError::ConfigMismatch { .. } | RioError::Incomparable(_) => 4,
            RioError::Numerical { .. } | RioError::Diverged { .. } => 5,
            RioError::Exhausted { .. } | RioError::Size { .. } => 6,
            RioError::DegenerateInput(_)
            | RioError::EmptyPool { .. }
            | RioError::EmptyPairs(_)
            | RioError::UndefinedRatio(_) => 7,
        }
    }
}
