use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// An image or batch does not match the shape a model expects.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid prediction: {0}")]
    InvalidPrediction(String),
    /// Training data cannot support the requested fit.
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("exact marginalization needs an enumerable sampler ({0} is not)")]
    UnsupportedOracle(String),
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("patch {index}: {source}")]
    Patch { index: usize, source: Box<Error> },
}

impl Error {
    /// Innermost error, looking through patch wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Patch { source, .. } => source.root(),
            other => other,
        }
    }
}
