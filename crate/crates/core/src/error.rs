use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: &'static str,
        found: String,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("frame dimensions must be even, got {width}x{height}")]
    OddDimensions { width: usize, height: usize },

    #[error("sample {value} at index {index} does not fit in {bit_depth} bits")]
    RangeError {
        index: usize,
        value: u16,
        bit_depth: u8,
    },

    #[error("invalid superpixel layout: {0}")]
    InvalidLayout(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("failed to parse {path}: {message}")]
    ParseError { path: PathBuf, message: String },

    #[error("manifest record references missing frame {0}")]
    UnresolvedFramePath(PathBuf),

    #[error("duplicate participant id {0:?}")]
    DuplicateParticipant(String),

    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),

    #[error("gamma must be positive, got {0}")]
    NonPositiveGamma(f64),

    #[error("huber delta must be positive, got {0}")]
    NonPositiveDelta(f64),

    #[error("image is {width}x{height}, need at least {min}x{min}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },

    #[error("too few matches: need {needed}, got {got}")]
    TooFewMatches { needed: usize, got: usize },

    #[error("every RANSAC sample was degenerate")]
    DegenerateSample,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("participants are not paired across arms: {0}")]
    UnpairedParticipants(String),

    #[error("calibration axis {0} has zero prediction variance")]
    DegenerateAxis(&'static str),

    #[error("grid {grid}x{grid} is finer than the {width}x{height} plane")]
    GridTooFine {
        grid: usize,
        width: usize,
        height: usize,
    },

    #[error("too few samples: need {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("normal equations are singular")]
    SingularSystem,

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
