use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CalibrationError {
    #[error("insufficient data: capture window has {got} samples, at least {needed} required")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid calibration: mvc_raw ({mvc_raw}) must exceed rest_raw ({rest_raw})")]
    InvalidCalibration { rest_raw: u16, mvc_raw: u16 },
    #[error("calibration required")]
    CalibrationRequired,
}

/// A parameter failed validation. `field` names the offending key as it
/// appears in config files and `set_config` patches.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid {field}: {msg}")]
pub struct ValidationError {
    pub field: String,
    pub msg: String,
}

impl ValidationError {
    pub fn new(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            msg: msg.into(),
        }
    }
}

/// Errors reading or writing session files.
#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("io: {0}")]
    Stream(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("row {row} (line {line}): {msg}")]
    Row { row: usize, line: usize, msg: String },
    #[error("schema: {0}")]
    Schema(String),
    #[error("unsupported format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
}

/// Errors surfaced by the engine to command issuers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CommandError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("{0}")]
    State(String),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("engine is not running")]
    Disconnected,
}

impl CommandError {
    /// Field name for the wire error message, when one applies.
    pub fn field(&self) -> Option<&str> {
        match self {
            CommandError::Validation(v) => Some(&v.field),
            _ => None,
        }
    }
}

/// Errors loading the engine configuration.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Syntax { path: PathBuf, msg: String },
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("unknown patient preset {0:?} (expected severe, moderate or mild)")]
    UnknownPreset(String),
}
