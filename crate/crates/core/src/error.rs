use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("cannot build {k} orthogonal pilots of length {tau_t}")]
    PilotOrthogonality { k: usize, tau_t: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("distance {0} m is below the 1 m path-loss clamp")]
    DistanceBelowClamp(f64),

    #[error("expected a {expected} observation, got {actual}")]
    WrongPhase {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("reference channel has zero energy")]
    ZeroNorm,

    #[error("bit row of length {len} is not a multiple of {bits_per_symbol}")]
    MalformedBits { len: usize, bits_per_symbol: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
