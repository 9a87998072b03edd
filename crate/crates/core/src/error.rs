use thiserror::Error;

use crate::expr::ExprError;
use crate::io::FormatError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("field kind mismatch: expected {expected}, found {found}")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("axis {axis} out of range for a {dim}-dimensional domain")]
    AxisOutOfRange { axis: usize, dim: usize },

    #[error(
        "boundary condition {bc} violated on face {face} at node {node} (time level {level}): \
         |value| = {value:.3e} > tolerance {tolerance:.3e}"
    )]
    BoundaryViolation {
        bc: &'static str,
        face: String,
        node: usize,
        level: usize,
        value: f64,
        tolerance: f64,
    },

    #[error("non-finite value encountered in {stage} at step {step}")]
    NonFinite { stage: &'static str, step: usize },

    #[error("conjugate-gradient solve did not converge: {iterations} iterations, relative residual {residual:.3e}")]
    LinearSolve { iterations: usize, residual: f64 },

    #[error("CFL condition violated at time level {step}: Courant number {courant:.3} > 1")]
    Cfl { step: usize, courant: f64 },

    #[error("picard-diverged after {iterations} iterations (last update {last_update:.3e})")]
    PicardDiverged {
        iterations: usize,
        last_update: f64,
        trace: Vec<f64>,
    },

    #[error("line search failed at iteration {iteration}: step underflow (objective {objective:.6e})")]
    LineSearch {
        iteration: usize,
        objective: f64,
        trace: Vec<f64>,
    },

    #[error("estimate violated: no positive constant satisfies the {which} estimate for any lambda on the grid (worst member {member}, lambda {lambda}, margin {margin:.3e})")]
    EstimateViolation {
        which: &'static str,
        member: usize,
        lambda: f64,
        margin: f64,
    },

    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error(transparent)]
    Format(#[from] FormatError),
}

impl Error {
    /// Stable machine-readable tag for failure reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "invalid-grid",
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::KindMismatch { .. } => "kind-mismatch",
            Error::GridMismatch => "grid-mismatch",
            Error::AxisOutOfRange { .. } => "axis-out-of-range",
            Error::BoundaryViolation { .. } => "boundary-violation",
            Error::NonFinite { .. } => "non-finite",
            Error::LinearSolve { .. } => "linear-solve",
            Error::Cfl { .. } => "cfl-violation",
            Error::PicardDiverged { .. } => "picard-diverged",
            Error::LineSearch { .. } => "line-search",
            Error::EstimateViolation { .. } => "estimate-violation",
            Error::Expr(_) => "expression",
            Error::Format(_) => "format",
        }
    }
}
