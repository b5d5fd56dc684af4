use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid surface: {0}")]
    InvalidSurface(String),
    #[error("point outside every chart: {0}")]
    OutOfDomain(String),
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("straight segment leaves the flat band without an event split")]
    ContractViolation,
    #[error("fundamental-domain reduction exceeded {0} steps")]
    ReductionFailure(usize),
    #[error("step size underflow at t = {0}")]
    StiffnessFailure(f64),
    #[error("word is not hyperbolic (|trace| = {0})")]
    NotHyperbolic(f64),
    #[error("periodic refinement did not converge (residual {0:e})")]
    RefineFailure(f64),
    #[error("support too large for subset enumeration ({0} atoms, limit 12)")]
    SizeLimit(usize),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, LabError>;
