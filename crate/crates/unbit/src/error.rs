//! Crate-wide error type. One enum, one variant per failure domain, so CLI
//! exit-code mapping stays trivial (every variant is a domain error).

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Text parse failure with 1-based line/column.
    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: u32, col: u32, msg: String },

    /// Binary container violation (bad magic, truncation, crc mismatch, ...).
    #[error("format error: {0}")]
    Format(String),

    #[error("fabric generation: {0}")]
    FabricGen(String),

    /// Netlist- or design-level validation failure.
    #[error("validation: {0}")]
    Validate(String),

    #[error("bitgen: {0}")]
    Bitgen(String),

    #[error("reverse: {0}")]
    Reverse(String),

    #[error("convert: {0}")]
    Convert(String),

    #[error("manipulate: {0}")]
    Manip(String),

    #[error("route: {0}")]
    Route(String),

    #[error("simulate: {0}")]
    Sim(String),

    #[error("trojan: {0}")]
    Trojan(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(line: u32, col: u32, msg: impl Into<String>) -> Self {
        Error::Parse { line, col, msg: msg.into() }
    }
}
