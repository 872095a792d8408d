use thiserror::Error;

use crate::control::ControlSolution;
use crate::obstacle::ObstacleSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(&'static str),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid exponent {0}: must satisfy p > 1")]
    InvalidExponent(f64),

    #[error("invalid norm index {0}: must satisfy q >= 1")]
    InvalidNormIndex(f64),

    /// The obstacle lies strictly above the boundary data, so the constraint set is empty.
    #[error(
        "infeasible obstacle: obstacle {obstacle} exceeds boundary value {boundary} at node {node}"
    )]
    InfeasibleObstacle {
        node: usize,
        obstacle: f64,
        boundary: f64,
    },

    /// The iteration stopped without meeting its tolerance. The last iterate is kept.
    #[error(
        "solver did not converge after {} iterations (residual {:.3e}, tolerance {:.3e})",
        .0.report.iterations, .0.report.final_residual, .0.report.tolerance_used
    )]
    NonConvergence(Box<ObstacleSolution>),

    /// The computed control is not a fixed point of the obstacle operator to the
    /// required accuracy. The solution is still returned for inspection.
    #[error(
        "fixed-point certificate failed: residual {:.3e} exceeds {:.3e}",
        .0.fixed_point_residual, .0.certificate_tolerance
    )]
    CertificateFailure(Box<ControlSolution>),

    #[error("instance too large for the dense oracle: {nodes} nodes (limit {limit})")]
    TooLarge { nodes: usize, limit: usize },

    #[error("operation requires a one-dimensional grid")]
    NotOneDimensional,

    #[error("missing profile: the control problem needs a target profile z")]
    MissingProfile,

    #[error("malformed grid function CSV: {0}")]
    Csv(String),
}
