use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failures while reading or validating a `poseseq` file.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("malformed header field `{field}`: {reason}")]
    MalformedHeader { field: String, reason: String },
    #[error("inconsistent header field `{field}`: {reason}")]
    InconsistentHeader { field: String, reason: String },
    #[error("unsupported units `{0}` (only \"mm\" is accepted)")]
    UnsupportedUnits(String),
    #[error("unsupported poseseq version {0}")]
    UnsupportedVersion(u64),
    #[error("payload length mismatch: header implies {expected} bytes, found {actual}")]
    PayloadLength { expected: usize, actual: usize },
    #[error("non-finite coordinate at frame {frame}, joint {joint}, axis {axis}")]
    NonFinite {
        frame: usize,
        joint: usize,
        axis: usize,
    },
}

/// Failures while reading a checkpoint archive.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArchiveError {
    #[error("archive format version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("archive kind `{found}` where `{expected}` was expected")]
    WrongKind { expected: String, found: String },
    #[error("corrupted archive: {0}")]
    Corrupted(String),
    #[error("archive is missing blob `{0}`")]
    MissingBlob(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("Sig5 prior is singular for joint row {row}: theta2 + theta4 == 0")]
    SingularRate { row: usize },
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("k-means left cluster {cluster} empty after {attempts} attempts")]
    EmptyCluster { cluster: usize, attempts: usize },
    #[error("tensor backend: {0}")]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(context: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            context,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
