use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParams { field: &'static str, reason: String },

    #[error("cost function violates its assumptions: {0}")]
    InvalidCost(String),

    #[error("(c')^-1(M0) does not exist: c' stays below M0 = {m0}")]
    CostRange { m0: f64 },

    #[error("argument {x} outside the marginal-value domain [0, {upper}]")]
    Domain { x: f64, upper: f64 },

    #[error("degenerate variance dynamics: {0}")]
    DegenerateDynamics(String),

    #[error("time step {dt} exceeds the stability bound {bound}")]
    StepSize { dt: f64, bound: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("slope {p} at gamma = {gamma} outside [0, {upper}]")]
    SlopeOutOfRange { gamma: f64, p: f64, upper: f64 },

    #[error("no convergence after {iterations} iterations (last change {last_change:e}): {context}")]
    NoConvergence {
        iterations: usize,
        last_change: f64,
        context: String,
    },

    #[error("foot point {foot} of node gamma = {gamma} left the grid")]
    FootPointEscape { gamma: f64, foot: f64 },

    #[error("isotonic slope projection moved a slope by {shift:e} (limit {limit:e})")]
    ConcavityViolation { shift: f64, limit: f64 },

    #[error("negative radicand {value:e} at gamma = {gamma}")]
    NegativeRadicand { gamma: f64, value: f64 },

    #[error("gamma_eq = {gamma_eq} within {width:e} of gamma_D = {gamma_d}: inactive slope {inactive}, active slope {active}")]
    CaseMismatch {
        gamma_eq: f64,
        gamma_d: f64,
        width: f64,
        inactive: f64,
        active: f64,
    },

    #[error("cost slope kink at gamma^2 p / alpha = {x}")]
    NonSmoothPoint { x: f64 },

    #[error("singular Jacobian (det = {det:e})")]
    SingularJacobian { det: f64 },

    #[error("sign mismatch for {parameter}: {detail}")]
    SignMismatch { parameter: String, detail: String },

    #[error("gamma = {gamma} outside [0, {gamma_max}]")]
    GammaOutOfRange { gamma: f64, gamma_max: f64 },

    #[error("numerical blowup on path {path} at t = {t}")]
    NumericalBlowup { path: u64, t: f64 },

    #[error("{failed} of {total} paths failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("policy ordering violated: {0}")]
    OrderingViolation(String),

    #[error("invalid simulation config: {0}")]
    InvalidSimConfig(String),
}

impl Error {
    /// True for failures caused by bad input rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParams { .. }
                | Error::InvalidCost(_)
                | Error::CostRange { .. }
                | Error::InvalidGrid(_)
                | Error::StepSize { .. }
                | Error::InvalidSimConfig(_)
                | Error::GammaOutOfRange { .. }
                | Error::Domain { .. }
        )
    }
}
