use thiserror::Error;

/// Errors raised by the solver and the closed-form evaluators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("exponent {exponent:.3} exceeds the representable budget {cap}")]
    Range { exponent: f64, cap: f64 },

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("step budget of {0} exhausted")]
    TooManySteps(usize),

    #[error("no zero found before the integration floor {floor}")]
    NoZero { floor: f64 },

    #[error("tail start invalid: {0}")]
    TailInvalid(String),

    #[error("no convexity threshold found in (0, {u_max}]")]
    NoConvexity { u_max: f64 },

    #[error("Newton iteration did not converge: {0}")]
    NonConvergence(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("degenerate derivative: y'(T) = {0:e}")]
    Degenerate(f64),

    #[error("hypotheses unmet: {0}")]
    HypothesesUnmet(String),

    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
