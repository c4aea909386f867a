use thiserror::Error;

/// Errors raised by the simulator.
///
/// Variants fall into two families that the command-line driver maps to
/// distinct exit codes: parameter/configuration problems and numerical
/// failures during a run.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{quantity} = {value} outside its domain {domain}")]
    Domain {
        quantity: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("degenerate barrier at bias {gamma}: well and barrier top have merged")]
    DegenerateBarrier { gamma: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(
        "eigen-iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("tridiagonal solve broke down at row {row}")]
    SolverBreakdown { row: usize },

    #[error("state cannot be renormalized: switching probability {p} leaves no trapped norm")]
    NotRenormalizable { p: f64 },

    #[error("trace shows no decaying tail: {0}")]
    InsufficientDecay(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by bad input rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. } | Error::Domain { .. } | Error::Config(_)
        )
    }

    /// Short machine-readable tag, used on the CLI's error line.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } => "invalid-parameter",
            Error::Domain { .. } => "domain",
            Error::DegenerateBarrier { .. } => "degenerate-barrier",
            Error::Config(_) => "config",
            Error::NoConvergence { .. } => "no-convergence",
            Error::SolverBreakdown { .. } => "solver-breakdown",
            Error::NotRenormalizable { .. } => "not-renormalizable",
            Error::InsufficientDecay(_) => "insufficient-decay",
            Error::Numerical(_) => "numerical",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
