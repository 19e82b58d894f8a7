use std::io;

use msfilter_core::integrator::IntegrationError;
use msfilter_core::FilterError;
use msfilter_core::oracle::OracleError;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("numerical blow-up: {0}")]
    BlowUp(String),
    #[error("{0}")]
    Degenerate(String),
    #[error("{0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl HarnessError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl std::fmt::Display, source: io::Error) -> Self {
        Self::Io {
            path: path.to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => 2,
            Self::BlowUp(_) => 3,
            Self::Degenerate(_) => 4,
            Self::Numerical(_) | Self::Io { .. } => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Self::Config { .. } => "config",
            Self::BlowUp(_) => "blow_up",
            Self::Degenerate(_) => "degenerate_weights",
            Self::Numerical(_) => "numerical",
            Self::Io { .. } => "io",
        }
    }

    /// Machine-readable report for stderr.
    pub fn report(&self) -> serde_json::Value {
        let mut v = json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        if let Self::Config { key, .. } = self {
            v["key"] = json!(key);
        }
        v
    }
}

impl From<IntegrationError> for HarnessError {
    fn from(e: IntegrationError) -> Self {
        match e {
            IntegrationError::BlowUp { .. } => Self::BlowUp(e.to_string()),
            IntegrationError::InvalidParameter { .. } => Self::config("kernel", e.to_string()),
        }
    }
}

impl From<FilterError> for HarnessError {
    fn from(e: FilterError) -> Self {
        match e {
            FilterError::Integration { source: IntegrationError::BlowUp { .. }, .. } => Self::BlowUp(e.to_string()),
            FilterError::Degenerate(_) => Self::Degenerate(e.to_string()),
            FilterError::InvalidInput(_) => Self::config("config", e.to_string()),
            _ => Self::Numerical(e.to_string()),
        }
    }
}

impl From<OracleError> for HarnessError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Filter(f) => f.into(),
            other => Self::Numerical(other.to_string()),
        }
    }
}
