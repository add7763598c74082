use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("missing required fields: {}", .0.join(", "))]
    Missing(Vec<String>),
    #[error("config field `{path}`: {message}")]
    Field { path: String, message: String },
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("override: {0}")]
    Override(String),
    #[error("experiment {experiment} failed: {source}")]
    Experiment {
        experiment: String,
        #[source]
        source: stochevo::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Configuration and numeric errors share exit code 2.
    pub fn exit_code(&self) -> i32 {
        2
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
