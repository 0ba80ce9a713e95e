use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("rotation angle at or numerically indistinguishable from pi")]
    AngleAtPi,
    #[error("right Jacobian is singular or its inverse failed validation")]
    SingularJacobian,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("matrix is not a valid group element: {0}")]
    InvalidElement(&'static str),
    #[error("covariance invalid: {0}")]
    InvalidCovariance(&'static str),
    #[error("result covariance is indefinite (min eigenvalue {min_eigenvalue:e})")]
    NonPsdResult { min_eigenvalue: f64 },
    #[error("invalid weights: {0}")]
    WeightError(&'static str),
    #[error("joint covariance is singular or ill-conditioned")]
    SingularJoint,
    #[error("constraint matrix is rank deficient")]
    RankDeficient,
    #[error("innovation covariance is not positive definite")]
    SingularInnovationCov,
    #[error("time step must be positive")]
    NonPositiveStep,
    #[error("unknown marker {0}")]
    UnknownMarker(u32),
    #[error("message from robot {sender} is {age:.3} s old (bound {bound:.3} s)")]
    StaleMessage { sender: u32, age: f64, bound: f64 },
    #[error("need at least {required} samples, got {actual}")]
    InsufficientSamples { required: usize, actual: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}
