use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input data inconsistent with what an operation needs (missing team,
    /// set mismatch, missing predictor value).
    #[error("data error: {0}")]
    Data(String),

    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Exact computation requested beyond the configured work cap.
    #[error("capacity error: {0}")]
    Capacity(String),

    /// One or more invariant violations, each entry naming the offender.
    #[error("validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    /// The beats graph is not strongly connected, so the unpenalized
    /// maximum-likelihood estimate does not exist.
    #[error(
        "partition condition violated: teams {dominant:?} are never ranked below teams {rest:?}; \
         set a positive penalty or drop the offending teams"
    )]
    Partition { dominant: Vec<String>, rest: Vec<String> },

    #[error("optimizer did not converge after {restarts} restarts (best objective {best_value})")]
    NonConvergence {
        restarts: usize,
        best_value: f64,
        best_point: Vec<f64>,
    },

    #[error("observed information is not positive definite (eigenvalues {eigenvalues:?})")]
    SingularInformation { eigenvalues: Vec<f64> },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonConvergence { .. } | Error::SingularInformation { .. } => 3,
            _ => 2,
        }
    }
}
