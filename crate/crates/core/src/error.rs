use thiserror::Error;

/// Errors raised across fitting, risk estimation, the asymptotic solver and the
/// simulation harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("design matrix is rank deficient ({0})")]
    RankDeficient(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("nonlinear system did not converge (best residual {best_residual:.3e})")]
    NoConvergence { best_residual: f64 },

    #[error("trace oracle failed: {0}")]
    Oracle(String),

    #[error("tuning failed: every grid point is degenerate")]
    TuningFailed,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Whether the error stems from a numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_)
                | Error::NoConvergence { .. }
                | Error::Oracle(_)
                | Error::TuningFailed
                | Error::RankDeficient(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
