use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("domain violation: H = {h_value:.3e} is on the undescribed side")]
    DomainViolation { h_value: f64 },
    #[error("no event before t_max = {t_max}")]
    NoEvent { t_max: f64 },
    #[error("step size underflow at t = {t}")]
    StiffnessFailure { t: f64 },
    #[error("more than {max_events} events (possible Zeno behaviour)")]
    EventAccumulation { max_events: usize },
    #[error("orbit did not reach the tangency manifold")]
    NoTangency,
    #[error("orbit did not return to the section")]
    NoReturn,
    #[error("not supported: {0}")]
    NotSupported(String),
    #[error("Newton did not converge after {iterations} iterations (|G| = {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("singular Jacobian (condition number {condition:.3e})")]
    SingularJacobian { condition: f64 },
    #[error("initial point is not on the curve (|G| = {residual:.3e})")]
    InitialPointInvalid { residual: f64 },
    #[error("continuation stalled: step {step:.3e} below minimum")]
    StallError { step: f64 },
    #[error("unsupported dimension {dim} for {what}")]
    UnsupportedDimension { what: String, dim: usize },
    #[error("no eigenvalue within tolerance of the critical value (closest distance {distance:.3e})")]
    NotCritical { distance: f64 },
    #[error("multiple or resonant critical eigenvalues: {0}")]
    MultipleCritical(String),
    #[error("degenerate normal form: {what} = {value:.3e}")]
    DegenerateNF { what: String, value: f64 },
    #[error("transversality failure: {what} = {value:.3e}")]
    TransversalityFailure { what: String, value: f64 },
    #[error("insufficient points: {found} found, {needed} needed")]
    InsufficientPoints { found: usize, needed: usize },
    #[error("gamma = {0} outside (1/2, 1)")]
    InvalidGamma(f64),
    #[error("orbit escaped the domain at iteration {iteration}")]
    OrbitEscaped { iteration: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("resonant rotation angle theta = {0}")]
    ResonantTheta(f64),
    #[error("invalid section: {0}")]
    InvalidSection(String),
}
