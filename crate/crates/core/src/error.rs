//! Error type shared by every module of the crate.

use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensor kernels, the graph, model assembly and I/O.
#[derive(Debug)]
pub enum Error {
    /// Operand shapes are inconsistent with the requested operation.
    Shape { op: &'static str, detail: String },
    /// An operation spec (kernel/stride/padding/groups, pool window, ...) is invalid.
    InvalidSpec { op: &'static str, detail: String },
    /// A configuration value or combination is unusable.
    Config(String),
    /// An API contract was violated (non-scalar loss root, nondeterministic builder, ...).
    Contract(String),
    /// A kernel produced NaN/Inf from finite inputs, or was fed non-finite data.
    NonFinite { op: &'static str },
    /// Training failed (NaN gradient or loss); carries the offending step/parameter.
    Train(String),
    /// User-supplied data is invalid (non-binary mask, too few ids, out-of-range argument).
    Input(String),
    /// Checkpoint magic bytes are wrong.
    BadMagic([u8; 4]),
    /// Checkpoint format version is unsupported.
    BadVersion(u32),
    /// Checkpoint entry uses an unknown dtype code.
    UnsupportedDtype(u8),
    /// A file ended before the announced payload was read.
    Truncated { expected: u64, got: u64 },
    /// An image or container file violates its format specification.
    Format(String),
    /// A named tensor is missing from a parameter store or checkpoint.
    MissingParameter(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "shape error in {op}: {detail}"),
            Error::InvalidSpec { op, detail } => write!(f, "invalid spec for {op}: {detail}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::NonFinite { op } => write!(f, "non-finite value produced by {op}"),
            Error::Train(msg) => write!(f, "training error: {msg}"),
            Error::Input(msg) => write!(f, "input error: {msg}"),
            Error::BadMagic(m) => write!(f, "bad checkpoint magic {m:?} (expected \"USEA\")"),
            Error::BadVersion(v) => write!(f, "unsupported checkpoint version {v} (expected 1)"),
            Error::UnsupportedDtype(d) => write!(f, "unsupported dtype code {d} in checkpoint"),
            Error::Truncated { expected, got } => {
                write!(f, "truncated file: expected {expected} bytes, got {got}")
            }
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::MissingParameter(name) => write!(f, "missing parameter: {name}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn spec_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::InvalidSpec {
        op,
        detail: detail.into(),
    }
}
