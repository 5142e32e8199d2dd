use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or contract-violating input (schema, values, dimensions).
    #[error("invalid input: {0}")]
    Input(String),

    #[error("row {row}, column `{column}`: {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("{solver} did not converge after {iterations} iterations (score norm {score_norm:.3e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        score_norm: f64,
    },

    #[error("singular system in {context} (condition estimate {condition:.3e})")]
    Singular { context: &'static str, condition: f64 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Cell { .. } | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 2,
            Error::NonConvergence { .. } | Error::Singular { .. } => 3,
            Error::Invariant(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Input(_) => "input",
            Error::Cell { .. } => "cell",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Singular { .. } => "singular",
            Error::Invariant(_) => "invariant",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
