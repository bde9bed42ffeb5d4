use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape error: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("{op}: contract violation: {msg}")]
    Contract { op: &'static str, msg: String },

    #[error("{op}: unsupported shape: {msg}")]
    UnsupportedShape { op: &'static str, msg: String },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("invalid option: {0}")]
    InvalidOption(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn shape_err<T>(op: &'static str, msg: impl Into<String>) -> Result<T> {
    Err(TensorError::Shape { op, msg: msg.into() })
}

pub(crate) fn contract_err<T>(op: &'static str, msg: impl Into<String>) -> Result<T> {
    Err(TensorError::Contract { op, msg: msg.into() })
}
