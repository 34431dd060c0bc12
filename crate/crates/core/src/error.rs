use thiserror::Error;

use crate::pdd::ConvergenceTrace;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("linear system is near-singular (condition estimate {condition:e})")]
    NearSingular { condition: f64 },

    /// The distortion-amplification loop of the relay diverges for the given gain.
    #[error("relay loop unstable (spectral radius {spectral_radius:.6})")]
    RelayLoopUnstable { spectral_radius: f64 },

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    /// The optimizer hit its outer iteration cap with the violation still above threshold.
    #[error("optimizer did not reach the violation threshold (final zeta {:e})", .trace.final_zeta())]
    NoConvergence { trace: Box<ConvergenceTrace> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-friendly tag used in the `status` column of experiment output.
    pub fn status_tag(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Domain(_) => "domain",
            Error::NearSingular { .. } => "near_singular",
            Error::RelayLoopUnstable { .. } => "loop_unstable",
            Error::NotPsd { .. } => "not_psd",
            Error::NoConvergence { .. } => "no_convergence",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}
