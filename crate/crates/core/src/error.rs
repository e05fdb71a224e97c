use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("singular matrix: |det| = {det:e} below threshold {threshold:e}")]
    SingularMatrix { det: f64, threshold: f64 },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("determinant must be positive, got {det:e}")]
    NonPositiveDeterminant { det: f64 },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("integrator step failure at t = {t}: {reason}")]
    StepFailure { t: f64, reason: String },
    #[error("trajectory too short: spans t <= {t_end}, need at least {required}")]
    TrajectoryTooShort { t_end: f64, required: f64 },

    #[error("quadrature failed to converge on [{a}, {b}]")]
    QuadratureFailure { a: f64, b: f64 },
    #[error("sigma = {sigma} outside the admissible interval (0, {upper})")]
    SigmaOutOfRange { sigma: f64, upper: f64 },

    #[error("tau = {tau} outside the integrated range [0, {tau_max}]")]
    OutOfRange { tau: f64, tau_max: f64 },
    #[error("need at least {required} frames, got {got}")]
    InsufficientFrames { required: usize, got: usize },

    #[error("Jacobian determinant non-positive ({jdet:e}) at node {node}")]
    JacobianDegenerate { node: usize, jdet: f64 },
    #[error("field shape mismatch: expected {expected} nodes, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("grid too coarse to resolve the profile: {reason}")]
    BudgetInfeasible { reason: String },
    #[error("grid invariant violated: {reason}")]
    GridInvalid { reason: String },

    #[error("a-priori bound violated at tau = {tau}: {bound}")]
    AprioriViolated { tau: f64, bound: String },
    #[error("time step underflow at tau = {tau} (dtau = {dtau:e})")]
    CflFailure { tau: f64, dtau: f64 },

    #[error("derivative order {order} needs at least {required} nodes per axis, grid has {got}")]
    StencilUnderflow { order: usize, required: usize, got: usize },
    #[error("need at least {required} snapshots, got {got}")]
    TooFewSnapshots { required: usize, got: usize },
    #[error("fit window too short: {reason}")]
    WindowTooShort { reason: String },
}
