use std::fmt;

use thiserror::Error;

/// A point of the evaluation domain `[0, T] x torus x frequencies`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Witness {
    pub t: f64,
    pub x: f64,
    pub xi: f64,
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(t={}, x={}, xi={})", self.t, self.x, self.xi)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite symbol value at {0}")]
    Evaluation(Witness),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("step {step}: no component clears the condition threshold; min |<h|e_j>| = {min_modulus:e} at {witness}")]
    ConditionFailure {
        step: usize,
        min_modulus: f64,
        witness: Witness,
    },

    #[error("step {step}: eigen-residual {residual:e} exceeds tolerance at {witness}")]
    BadEigenpair {
        step: usize,
        residual: f64,
        witness: Witness,
    },

    #[error("eigenvalue continuation is ambiguous at {witness} (assignment gap {gap:e})")]
    Continuation { witness: Witness, gap: f64 },

    #[error("time stepping became unstable at t={t} (dt*max|symbol| = {cfl})")]
    Instability { t: f64, cfl: f64 },

    #[error("symbol depends on x (max variation {variation:e})")]
    NotXIndependent { variation: f64 },

    #[error("fixed-point map is not contractive (rho = {rho})")]
    NotContractive { rho: f64 },

    #[error("cascade hypotheses fail: {0}")]
    HypothesisFailure(String),

    #[error("cascade solve failed: {0}")]
    SolveFailure(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
