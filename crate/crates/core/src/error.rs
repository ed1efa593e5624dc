use alloc::string::String;
use alloc::vec::Vec;

/// Errors produced by the engine.
///
/// Variants are grouped loosely by subsystem; [`Error::class`] gives a
/// stable machine-readable name for each.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("unknown op kind `{0}`")]
    UnknownOp(String),
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("backward called on a tensor that does not require grad")]
    Detached,
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("probabilities not normalized: {0}")]
    NotNormalized(String),
    #[error("tap count mismatch: teacher has {teacher}, student has {student}")]
    TapMismatch { teacher: usize, student: usize },
    #[error("class count mismatch: expected {expected}, found {found}")]
    ClassMismatch { expected: usize, found: usize },
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(usize),
    #[error("non-finite loss at iteration {0}")]
    NonFiniteLoss(usize),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("empty input to {0}")]
    EmptyInput(&'static str),
    #[error("class {class} has {available} samples, {requested} requested")]
    SubsetTooLarge {
        class: usize,
        available: usize,
        requested: usize,
    },
    #[error("bad magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated input: {0}")]
    Truncated(String),
    #[error("count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },
}

impl Error {
    /// Stable error class name, used for single-line CLI error reports.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape-mismatch",
            Error::UnknownOp(_) => "unknown-op",
            Error::NonScalar(_) => "non-scalar",
            Error::Detached => "detached",
            Error::InvalidSpec(_) => "invalid-spec",
            Error::InvalidConfig(_) => "invalid-config",
            Error::NotNormalized(_) => "not-normalized",
            Error::TapMismatch { .. } => "tap-mismatch",
            Error::ClassMismatch { .. } => "class-mismatch",
            Error::NonFiniteGradient(_) => "nan-gradient",
            Error::NonFiniteLoss(_) => "nan-loss",
            Error::EmptyDataset => "empty-dataset",
            Error::EmptyInput(_) => "empty-input",
            Error::SubsetTooLarge { .. } => "subset",
            Error::BadMagic { .. } => "bad-magic",
            Error::Truncated(_) => "truncated",
            Error::CountMismatch { .. } => "count-mismatch",
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
