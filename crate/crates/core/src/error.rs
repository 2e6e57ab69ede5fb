//! Crate-wide error type. Every fallible operation returns [`Result`].

use thiserror::Error;

/// Errors surfaced by grid construction, geometry kernels, the flow loop and
/// the solvers. Variants carry enough context to locate the failing grid point
/// or parameter without a debugger.
#[derive(Debug, Error)]
pub enum CrfError {
    /// A constructor or operation received parameters outside its contract.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// Two fields that must share a chart (dimension, resolution, mode) do not.
    #[error("chart mismatch: {0}")]
    ChartMismatch(String),

    /// A field contains a NaN or infinity where finite data is required.
    #[error("non-finite value in {what} at flat index {index}")]
    NonFinite { what: String, index: usize },

    /// A metric lost positive definiteness or is numerically singular.
    #[error("degenerate metric at flat index {index}: {detail}")]
    DegenerateMetric { index: usize, detail: String },

    /// The evolving form stopped being positive definite during a step.
    #[error(
        "positivity loss at t = {t}: eigenvalue {eigenvalue:.6e} at flat index {index} \
         is below the floor {floor:.3e}"
    )]
    PositivityLoss {
        t: f64,
        index: usize,
        eigenvalue: f64,
        floor: f64,
    },

    /// Step-size halving hit its retry limit or underflowed.
    #[error("time stepper breakdown at t = {t}: dt = {dt:.3e} after {retries} halvings")]
    FlowBreakdown { t: f64, dt: f64, retries: u32 },

    /// The singular-potential amplitude exceeds what the barrier inequalities
    /// admit on this grid; `kappa_max` is the measured admissible maximum.
    #[error("pole amplitude {kappa} too large: barrier inequalities fail above {kappa_max:.6}")]
    PoleTooStrong { kappa: f64, kappa_max: f64 },

    /// A measured inequality the run is contracted to uphold failed.
    #[error("estimate violation: {0}")]
    EstimateViolation(String),

    /// The Newton solver stalled before reaching its tolerance.
    #[error("solver failure after {iters} iterations: residual {residual:.6e}")]
    SolverFailure { iters: usize, residual: f64 },

    /// Malformed binary dump, config file, or other serialized artifact.
    #[error("format error: {0}")]
    Format(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CrfError>;
