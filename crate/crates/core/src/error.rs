use thiserror::Error;

/// Errors raised by the numerical laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum VilabError {
    #[error("grid resolution {n} is too coarse (need n >= {min})")]
    ResolutionTooCoarse { n: usize, min: usize },

    #[error("grid resolution {n} must be even for {kind} grids")]
    ResolutionNotEven { n: usize, kind: &'static str },

    #[error("energy {spec} is not defined on a {grid} grid")]
    IncompatibleGrid { spec: String, grid: &'static str },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("field is infeasible: {0}")]
    Infeasible(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("{0} is not an eigenvalue of the circle Laplacian")]
    NotAnEigenvalue(f64),

    #[error("no feasible critical point: {0}")]
    EmptyCriticalSet(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("hypothesis violated for battery element {index}: {detail}")]
    Hypothesis { index: usize, detail: String },

    #[error("time step too large: {0}")]
    StepTooLarge(String),
}

pub type Result<T> = std::result::Result<T, VilabError>;
