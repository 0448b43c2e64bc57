use alloc::string::String;

use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("length error: {0}")]
    Length(String),
    #[error("sample rate {found} Hz is not supported (expected 16000)")]
    Rate { found: u32 },
    #[error("energy error: {0}")]
    Energy(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("non-finite value produced by {op}")]
    NaN { op: String },
    #[error("reference error: {0}")]
    Reference(String),
    #[error("inventory error: {0}")]
    Inventory(String),
    #[error("audit failure at iteration {iteration}: {detail}")]
    Audit { iteration: usize, detail: String },
}
