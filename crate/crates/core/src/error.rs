use thiserror::Error;

/// Errors produced anywhere in the workbench.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Joint `joint` (0-based) is outside its configured limits.
    #[error("joint {joint} angle {angle:.4} rad outside limits [{lower:.4}, {upper:.4}]")]
    JointLimit {
        joint: usize,
        angle: f64,
        lower: f64,
        upper: f64,
    },

    /// The operation is not valid in the robot's current locomotion configuration.
    #[error("mode error: {0}")]
    Mode(String),

    /// The allocation matrix could not be inverted reliably.
    #[error("allocation matrix ill-conditioned (condition estimate {condition:.3e})")]
    Allocation { condition: f64 },

    /// All torque generators are pairwise parallel.
    #[error("degenerate generator set: no pair of generators spans a plane")]
    DegenerateSet,

    #[error("optimizer error: {0}")]
    Optimizer(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("qp error: {0}")]
    Qp(String),

    #[error("metrics error: {0}")]
    Metrics(String),

    /// The simulation produced a non-finite state.
    #[error("simulation diverged at t = {t:.4} s: {reason}")]
    Diverged { t: f64, reason: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
