use thiserror::Error;

/// Errors raised by the library. Layer numbers are 1-based (hidden layers
/// `1..=L`, output layer `L + 1`); sample indices are 0-based.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    Architecture(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("flattened parameter vector has length {got}, expected {expected}")]
    Length { expected: usize, got: usize },

    #[error("layer {layer}, sample {sample}: pre-activation leaves its affine segment (margin {margin:e})")]
    NotInRegime {
        layer: usize,
        sample: usize,
        margin: f64,
    },

    #[error("invalid activation: {0}")]
    Activation(String),

    #[error("{kind} has no {} affine segment", if *.constant { "constant" } else { "nonconstant" })]
    NoSuchSegment { kind: String, constant: bool },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range (1..={max})")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("invalid measure: {0}")]
    Measure(String),

    #[error("loss exponent must satisfy 1 < p < inf, got {0}")]
    Exponent(f64),

    #[error("segment for layer {layer} is constant; the nonconstant construction needs slope != 0")]
    ConstantSegmentSupplied { layer: usize },

    #[error("sample set is empty")]
    EmptyDomain,

    #[error("no constant segment supplied")]
    NoConstantSegment,

    #[error("E-family sampling failed after {retries} halvings of the perturbation scale")]
    ScaleTooLarge { retries: usize },

    #[error("target degenerate: {0}")]
    TargetDegenerate(String),

    #[error("hidden layer {layer} has width {width}; the parallel split needs width >= 2")]
    WidthTooSmall { layer: usize, width: usize },

    #[error("escape search inconclusive after {restarts} restarts")]
    SearchFailed { restarts: usize },

    #[error("I/O error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            Error::Io(e.to_string())
        } else {
            Error::Parse(e.to_string())
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Error::Io(e.to_string())
        } else {
            Error::Parse(e.to_string())
        }
    }
}
