//! Crate error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A command or numeric input contained NaN/inf or violated a precondition.
    #[error("invalid command: {0}")]
    InvalidCommand(String),

    /// Tensor or vector dimensions do not match what an operation expects.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A configuration value violates an invariant; names the offending field.
    #[error("config error: field `{field}`: {message}")]
    Config { field: String, message: String },

    /// A referenced model, dataset, or trace file is missing.
    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    /// Data generation or a scenario run failed.
    #[error("scenario failure: {0}")]
    Scenario(String),

    /// Ensemble calibration produced a degenerate in-distribution model.
    #[error("degenerate calibration: {0}")]
    DegenerateCalibration(String),

    /// File parse failure (CSV, weight file, manifest).
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("toml error: {0}")]
    Toml(String),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn parse(path: impl AsRef<std::path::Path>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            message: message.into(),
        }
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Toml(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Toml(e.to_string())
    }
}
