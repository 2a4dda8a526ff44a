use thiserror::Error;

/// Errors surfaced by geometry construction, cell solves and time stepping.
#[derive(Debug, Error)]
pub enum Error {
    #[error("region `{region}` is disconnected under periodic adjacency")]
    DisconnectedRegion { region: String },

    #[error("invalid inclusion fraction {fraction}: {reason}")]
    InvalidFraction { fraction: f64, reason: String },

    #[error("incommensurate resolution: {0}")]
    IncommensurateResolution(String),

    #[error("resolution mismatch: {0}")]
    ResolutionMismatch(String),

    #[error("linear solver diverged: residual {residual:.3e} after {iterations} iterations")]
    SolverDivergence { residual: f64, iterations: usize },

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("correctors were solved against a different cell or tensor: {0}")]
    MismatchedCorrectors(String),

    #[error(
        "two forms of the second-level tensor disagree: entry ({p},{q}) differs by {diff:.3e}"
    )]
    InconsistentDoubleIntegral { p: usize, q: usize, diff: f64 },

    #[error("linear solve failed during time step: {0}")]
    LinearSolveFailure(String),

    #[error("stability breach: |v|_inf = {vmax:.3e} exceeds ceiling {ceiling:.3e}; reduce dt")]
    StabilityBreach { vmax: f64, ceiling: f64 },

    #[error("no interface: the tiled geometry has an empty membrane")]
    NoInterface,

    #[error("ionic assumption violated: {assumption} at witness v={v}, w={w}")]
    AssumptionViolated { assumption: String, v: f64, w: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
