use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("malformed gait: {0}")]
    MalformedGait(String),

    #[error("time warp is not strictly increasing near t = {at}")]
    NonMonotoneWarp { at: f64 },

    #[error("singular constraint system (condition estimate {condition:e})")]
    SingularConstraint { condition: f64 },

    #[error("degenerate stance: {0}")]
    DegenerateStance(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("singular stencil at node ({i}, {j})")]
    SingularStencil { i: usize, j: usize },

    #[error("loop leaves the sampled grid at shape ({r1}, {r2})")]
    LoopOutsideGrid { r1: f64, r2: f64 },

    #[error("trajectory spans {cycles} cycles, which is not an integer")]
    NonIntegerCycles { cycles: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
