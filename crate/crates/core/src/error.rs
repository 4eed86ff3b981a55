use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("reduced model is undefined: {0}")]
    NonInvertible(String),

    #[error("integration exhausted {max_steps} steps at t = {t}")]
    StepLimit { t: f64, max_steps: usize },

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },

    #[error("integration aborted at t = {t}: {reason}")]
    Aborted { t: f64, reason: String },

    #[error("steady state not reached: periodicity residual {residual:e} exceeds {tolerance:e}")]
    NotConverged { residual: f64, tolerance: f64 },

    #[error("trajectory too short: {0}")]
    TooShort(String),

    #[error("degenerate loop: {0}")]
    DegenerateLoop(String),

    #[error("inconsistent pinch points: {0}")]
    InconsistentPinches(String),

    #[error("spectrum: {0}")]
    Spectrum(String),

    #[error("phase criterion undefined: {0}")]
    PhaseUndefined(String),

    #[error("pinch count needs coprime positive frequencies, got ({p}, {q})")]
    NotCoprime { p: u64, q: u64 },

    #[error("{path}: line {line}: {message}")]
    Ingest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: trace is not closed (gap {gap:e} > tolerance {tolerance:e})")]
    OpenTrace {
        path: PathBuf,
        gap: f64,
        tolerance: f64,
    },

    #[error("device: {0}")]
    Device(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error came out of the ODE solver.
    pub fn is_integration_failure(&self) -> bool {
        matches!(
            self,
            Error::StepLimit { .. }
                | Error::StepUnderflow { .. }
                | Error::NonFinite { .. }
                | Error::Aborted { .. }
        )
    }
}
