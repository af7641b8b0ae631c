use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid data: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("IRLS did not converge after {iterations} iterations (relative deviance change {last_change:.3e})")]
    Convergence {
        iterations: usize,
        last_change: f64,
        last_iterate: Vec<f64>,
    },

    #[error("coefficient {index} diverged to {value:.3e}; the design is separated, consider a ridge penalty")]
    Separation { index: usize, value: f64 },

    #[error("IPF did not converge after {iterations} cycles (margin error {error:.3e})")]
    IpfConvergence { iterations: usize, error: f64 },

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("too few joint events ({found}) for a time-varying fit; need at least {required}, use the constant-factor estimator")]
    InsufficientEvents { found: usize, required: usize },

    #[error("cell table infeasible at bin {bin}{}: pattern {pattern:#b} has probability {value:.3e}", trial.map(|t| format!(" (trial {})", t + 1)).unwrap_or_default())]
    InfeasibleTable {
        trial: Option<usize>,
        bin: usize,
        pattern: usize,
        value: f64,
    },

    #[error("bin probability {value:.3} >= 1 at bin {bin}; use a smaller bin width")]
    Resolution { bin: usize, value: f64 },

    #[error("simulation failed: {0}")]
    Simulation(String),

    #[error("degenerate test: {0}")]
    DegenerateTest(String),

    #[error("degenerate ROC: {0}")]
    DegenerateRoc(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
