use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("class index {value} out of range (num_classes = {num_classes}) at pixel ({row}, {col})")]
    ClassIndexOutOfRange {
        value: usize,
        num_classes: usize,
        row: usize,
        col: usize,
    },

    #[error("unpaired dataset entry: {0}")]
    UnpairedSample(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("style memory has no slots (U = 0)")]
    EmptyMemory,

    #[error("memory bank is in {actual} mode, operation requires {required} mode")]
    MemoryMode {
        required: &'static str,
        actual: &'static str,
    },

    #[error("non-finite value in loss term `{term}` at iteration {iteration}")]
    NonFinite { term: String, iteration: u64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(what: impl Into<String>, expected: &[usize], got: &[usize]) -> Self {
        Error::ShapeMismatch {
            what: what.into(),
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}
