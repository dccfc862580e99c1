use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error)]
pub enum SvphError {
    #[error("invalid map description: {0}")]
    InvalidMap(String),

    #[error("Jacobian is not orientation preserving at ({x:.6}, {theta:.6}): det = {det:e}")]
    DegenerateJacobian { x: f64, theta: f64, det: f64 },

    #[error("direction vector has zero length")]
    DegenerateDirection,

    #[error("Newton iteration diverged on inverse branch {branch:?} (residual {residual:e})")]
    NewtonDivergence { branch: Vec<u32>, residual: f64 },

    #[error("points do not lie in the same fiber of F^{n} (distance {distance:e})")]
    NotSameFiber { n: usize, distance: f64 },

    #[error("admissible interval for {which} is empty: condition {condition} fails")]
    EmptyConeInterval {
        which: &'static str,
        condition: &'static str,
    },

    #[error("target cone not reached within depth {max_depth}")]
    NotReached { max_depth: usize },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("quadrature with {points} points per axis cannot resolve frequency {needed}")]
    QuadratureUnderResolved { points: usize, needed: usize },

    #[error("eigen-solver stalled: {0}")]
    SolverStall(String),

    #[error(
        "averaged field has a degenerate zero near theta = {theta:.6} (derivative {derivative:e})"
    )]
    DegenerateZero { theta: f64, derivative: f64 },

    #[error("required depth {depth} exceeds the supported maximum {max}")]
    DepthTooLarge { depth: usize, max: usize },

    #[error("bound violated: {0}")]
    ViolatedBound(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, SvphError>;
