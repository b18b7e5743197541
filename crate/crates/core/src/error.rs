use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("autodiff error: {0}")]
    Autodiff(String),

    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: String, iteration: usize },

    #[error("label {label} at flat index {index} is not a valid class (classes = {classes})")]
    BadLabel {
        label: u8,
        index: usize,
        classes: usize,
    },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Pixmap(#[from] PixmapError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failure categories when decoding a checkpoint.
#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic: expected \"CFPN\", found {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated checkpoint: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },

    #[error("structural error at tensor index {index}: {detail}")]
    Structural { index: usize, detail: String },

    #[error("extent mismatch for tensor {name}: expected {expected:?}, found {found:?}")]
    ExtentMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid variant descriptor: {0}")]
    Variant(String),
}

/// Failure categories when decoding a portable pixmap.
#[derive(Debug, thiserror::Error)]
pub enum PixmapError {
    #[error("malformed pixmap at byte {offset}: {detail}")]
    Malformed { offset: usize, detail: String },

    #[error("pixmap payload truncated at byte {offset}: expected {expected} bytes, found {found}")]
    Truncated {
        offset: usize,
        expected: usize,
        found: usize,
    },

    #[error("value {value} exceeds the 8-bit range of a pixmap")]
    Range { value: usize },
}
