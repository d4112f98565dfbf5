use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point {point:?} lies outside the domain of {what}")]
    OutOfDomain { what: String, point: Vec<f64> },

    #[error("integral diverges{}: {detail}", coordinate.map(|c| format!(" in coordinate {c}")).unwrap_or_default())]
    Divergent {
        coordinate: Option<usize>,
        detail: String,
    },

    #[error("quadrature did not reach tolerance: estimate {estimate}, error bound {error_bound}")]
    Accuracy { estimate: f64, error_bound: f64 },

    #[error("jump regularity condition fails at tau = {tau}: {detail}")]
    Regularity { tau: f64, detail: String },

    #[error("anchor matrix is ill-conditioned (condition number {condition:e}); choose different anchor points")]
    AnchorSelection { condition: f64 },

    #[error("Riccati solution exploded at tau = {tau}")]
    Explosion { tau: f64 },

    #[error("maturity {tau} outside the solved range [0, {max}]")]
    Range { tau: f64, max: f64 },

    #[error("jump probability per step lambda*dt = {intensity_dt} exceeds 1; reduce dt")]
    StepSize { intensity_dt: f64 },

    #[error("{function} is not affine in the state")]
    NotAffine { function: String },

    #[error("jump measure support violation: {0}")]
    Support(String),

    #[error("i/o failure: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Re-labels a quadrature failure of a jump integral as a regularity violation.
    pub(crate) fn into_regularity(self, tau: f64) -> Self {
        match self {
            Error::Divergent { .. } | Error::Accuracy { .. } => Error::Regularity {
                tau,
                detail: self.to_string(),
            },
            other => other,
        }
    }
}
