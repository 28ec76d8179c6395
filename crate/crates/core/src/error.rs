use thiserror::Error;

/// Failures raised by the numerical pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("newton did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular jacobian at residual {residual:.3e}")]
    SingularJacobian { residual: f64 },

    #[error("bordered system is singular")]
    SingularBorderedSystem,

    #[error("inverse iteration did not converge (shift {shift:.6e})")]
    InverseIteration { shift: f64 },

    #[error("continuation step underflow at c = {c:.6e}, t_phi = {t_phi:.6e}")]
    StepUnderflow { c: f64, t_phi: f64 },

    #[error("fold refinement failed: {0}")]
    FoldRefinement(String),

    #[error("fold lost while tracking in a (last good a = {last_a:.8})")]
    FoldLost { last_a: f64 },

    #[error("branch assembly failed: {0}")]
    Assembly(String),

    #[error("t-chart unavailable: {0}")]
    ChartUnavailable(String),

    #[error("ambiguous count: c = {c:.6e} within tolerance of a fold value")]
    AmbiguousCount { c: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
