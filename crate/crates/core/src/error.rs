use thiserror::Error;

use crate::walk::ExcursionRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid environment law: {0}")]
    InvalidLaw(String),

    #[error("E[sum A^t] = 1 has no root above t = 1 (model requires kappa > 1)")]
    NoRootAbove1,

    #[error("Monte Carlo estimate of E[sum A^t] is not monotone enough to bracket a root: {0}")]
    NonMonotoneEstimate(String),

    #[error("node budget of {budget} exhausted before the stopping rule fired")]
    BudgetExceeded { budget: usize },

    #[error("perpetuity did not converge within {cap} steps")]
    MaxStepsExceeded { cap: usize },

    #[error("walk exceeded its step budget of {budget}")]
    StepBudgetExceeded {
        budget: u64,
        partial: Option<Box<ExcursionRecord>>,
    },

    #[error("trace is not positioned at a return time")]
    NotAtReturnTime,

    #[error("log-sum-exp overflow while evaluating path sums")]
    OverflowGuard,

    #[error("singular birth-death system")]
    SingularSystem,

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("quadrature for P({i},{j}) did not converge: {base} vs {doubled}")]
    QuadratureNotConverged {
        i: u64,
        j: u64,
        base: f64,
        doubled: f64,
    },

    #[error("spine excursion exceeded its budget of {budget}")]
    ExcursionBudgetExceeded { budget: u64 },

    #[error("neglected tail mass {bound:e} exceeds tolerance {tol:e}")]
    TruncationTailTooHeavy { bound: f64, tol: f64 },

    #[error("series did not converge at x = {x}")]
    SeriesNotConverged { x: f64 },

    #[error("fit window holds {found} samples, need at least {needed}")]
    WindowTooSparse { found: usize, needed: usize },
}
