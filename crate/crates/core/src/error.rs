use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("degenerate Γ = sqrt(β² - γ²) = 0 (β = γ = {beta}); use the numeric transfer matrix")]
    DegenerateGamma { beta: f64 },

    #[error("no zero crossing of |Q33(0)|²: requires β > γ > 0 (β = {beta}, γ = {gamma})")]
    NoZeroCrossing { beta: f64, gamma: f64 },

    #[error("numeric failure in {context}: {detail}")]
    Numeric { context: &'static str, detail: String },

    #[error(
        "noise model inconsistent at pixel {pixel}: eigenvalue {min_eigenvalue:e} below -1e-9 x trace ({trace:e})"
    )]
    ModelInconsistency {
        pixel: usize,
        min_eigenvalue: f64,
        trace: f64,
    },

    #[error("{context} is not positive semidefinite: eigenvalue {min_eigenvalue:e} below -1e-9 x trace ({trace:e})")]
    NotPsd {
        context: &'static str,
        min_eigenvalue: f64,
        trace: f64,
    },

    #[error("degenerate measurement model: every singular value of A*Σ⁻¹A is below the cutoff")]
    DegenerateModel,

    #[error("estimation impossible: ‖U(I - A⁻A)‖_F = {residual:e}")]
    NotEstimable { residual: f64 },

    #[error("box QP did not converge in {iterations} iterations (KKT residual {residual:e})")]
    Convergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("reduction step {step} ({name}) failed: {source}")]
    Step {
        step: u8,
        name: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown phantom `{0}` (expected two_slits, constant or checkerboard)")]
    UnknownPhantom(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("malformed image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("value out of range: {0}")]
    Range(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn at_step(self, step: u8, name: &'static str) -> Self {
        Error::Step {
            step,
            name,
            source: Box::new(self),
        }
    }
}
