use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: shape {shape:?} does not hold {len} elements")]
    ElementCount {
        op: &'static str,
        shape: Vec<usize>,
        len: usize,
    },

    #[error("{op}: non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("{0}")]
    Domain(String),

    #[error("singular matrix: zero pivot in column {pivot}")]
    Singular { pivot: usize },

    #[error("bad tensor file magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported tensor file version {0}")]
    UnsupportedVersion(u8),

    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),

    #[error("expected {expected}, found {found}")]
    DtypeMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("truncated {what}: expected {expected} bytes, got {got}")]
    Truncated {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("bad PNM magic {0:?}, expected P5 or P6")]
    BadPnmMagic([u8; 2]),

    #[error("malformed PNM header: {0}")]
    PnmHeader(String),

    #[error("PNM dimensions {width}x{height}x{channels} overflow the pixel limit")]
    DimensionOverflow {
        width: usize,
        height: usize,
        channels: usize,
    },

    #[error("cannot fuse grids {left:?} and {right:?}: token lattices differ")]
    Fusion {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{variant} connector: {source}")]
    Connector {
        variant: String,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed bundle: {0}")]
    Bundle(String),

    #[error("bench: {0}")]
    Bench(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for errors caused by unreadable or malformed input files.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::BadMagic(_)
                | Error::UnsupportedVersion(_)
                | Error::UnknownDtype(_)
                | Error::Truncated { .. }
                | Error::BadPnmMagic(_)
                | Error::PnmHeader(_)
                | Error::DimensionOverflow { .. }
                | Error::Bundle(_)
        )
    }
}
