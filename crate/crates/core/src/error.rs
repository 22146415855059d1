use thiserror::Error;

/// Everything that can go wrong inside the library.
///
/// Variants are grouped so a front end can map them onto exit codes:
/// configuration problems, numerical problems and I/O problems.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("numerical quality error: {0}")]
    NumericalQuality(String),

    #[error("ground state did not converge after {iterations} iterations (last relative energy change {last_change:e})")]
    Divergence { iterations: usize, last_change: f64 },

    #[error("instability at step {step}: max |psi| = {max_amplitude:e}")]
    Instability { step: usize, max_amplitude: f64 },

    #[error("aliasing error: {0}")]
    Aliasing(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("degenerate statistics: region norm {norm:e} is below threshold")]
    DegenerateStatistics { norm: f64 },

    #[error("inconclusive run: {reason}; try a total time of at least {suggested_ms:.1} ms")]
    InconclusiveRun { reason: String, suggested_ms: f64 },

    #[error("saturated out-of-plane component: |S_z| = {0} >= 1")]
    Saturation(f64),

    #[error("in-plane phase undefined: S_x = S_y = 0")]
    UndefinedPhase,

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("underdetermined: {0}")]
    Underdetermined(String),

    #[error("unidentifiable fit: {0}")]
    Unidentifiable(String),

    #[error("fit did not converge after {iterations} iterations (v_R = {v_r}, A = {amplitude})")]
    FitFailed {
        iterations: usize,
        v_r: f64,
        amplitude: f64,
    },

    #[error("non-physical input: {0}")]
    NonPhysical(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Coarse classification used by command-line front ends.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Domain(_) | Error::Aliasing(_) => {
                ErrorKind::Config
            }
            Error::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Numerical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numerical,
    Io,
}

pub type Result<T> = std::result::Result<T, Error>;
