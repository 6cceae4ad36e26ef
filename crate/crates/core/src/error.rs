use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("invalid network: {0}")]
    Validation(String),

    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("singular power-flow Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },

    #[error("invalid scheme configuration: {0}")]
    InvalidScheme(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no agent has a non-degenerate fallback/utopia span")]
    EmptyAgentSet,

    #[error("agent {agent} sits below its fallback utility (gain {gain})")]
    NegativeGain { agent: usize, gain: f64 },

    #[error("inequality index undefined for an all-zero profile")]
    AllZero,

    #[error("affine scale for agent {agent} must be positive, got {scale}")]
    NonPositiveScale { agent: usize, scale: f64 },

    #[error("fallback envelope is not feasible ({detail})")]
    FallbackInfeasible { detail: String },

    #[error("brute-force grid supports at most {max} agents, got {got}")]
    TooManyAgents { got: usize, max: usize },

    #[error("no feasible point on the brute-force grid")]
    NoFeasiblePoint,

    #[error("timestep {index}: {source}")]
    Timestep {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Stable machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "IoError",
            Error::Parse(_) => "ParseError",
            Error::Validation(_) => "ValidationError",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::SingularJacobian { .. } => "SingularJacobian",
            Error::InvalidScheme(_) => "InvalidScheme",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::EmptyAgentSet => "EmptyAgentSet",
            Error::NegativeGain { .. } => "NegativeGain",
            Error::AllZero => "AllZero",
            Error::NonPositiveScale { .. } => "NonPositiveScale",
            Error::FallbackInfeasible { .. } => "FallbackInfeasible",
            Error::TooManyAgents { .. } => "TooManyAgents",
            Error::NoFeasiblePoint => "NoFeasiblePoint",
            Error::Timestep { source, .. } => source.kind(),
        }
    }

    /// True for errors caused by the configuration rather than by a solve.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Io { .. }
            | Error::Parse(_)
            | Error::Validation(_)
            | Error::DimensionMismatch { .. }
            | Error::InvalidScheme(_)
            | Error::InvalidArgument(_) => true,
            Error::Timestep { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}

pub(crate) fn check_len(what: &'static str, got: usize, expected: usize) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            got,
            expected,
        })
    }
}
