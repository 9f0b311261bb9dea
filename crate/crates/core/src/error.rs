use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid potential spec: {0}")]
    Spec(String),
    #[error("non-finite potential at x = {0}")]
    NonFinite(f64),
    #[error("zero total mass")]
    ZeroMass,
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("eigen iteration did not converge (residual {residual:e})")]
    NoConvergence { residual: f64 },
    #[error("interval covers only {0} grid points, need at least 8")]
    TooFewPoints(usize),
    #[error("superlinearity required")]
    NotSuperlinear,
    #[error("not a {0}-Lyapunov function (worst relative drift excess {1:e})")]
    NotLyapunov(f64, f64),
    #[error("rate above guaranteed threshold: theta = {theta} >= theta_U = {theta_u}")]
    RateTooLarge { theta: f64, theta_u: f64 },
    #[error("insufficient moments for order {0}")]
    InsufficientMoments(u32),
    #[error("mu(U) = {0} > 1/2; use the mu(U)^2/(2 C_P) branch")]
    LargeSet(f64),
    #[error("chain: {0}")]
    Chain(String),
    #[error("requires detailed balance")]
    NotReversible,
    #[error("simulation: {0}")]
    Simulation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
