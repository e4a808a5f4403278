//! Error taxonomy shared by every module.
//!
//! Errors are grouped into three categories that map onto the CLI's exit
//! codes: configuration problems (exit 2), dataset/file problems (exit 3),
//! and numeric failures during optimization or inference (exit 4).

use std::fmt;

/// One validation problem found while checking a configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    /// Dotted path of the offending field, e.g. `train.decay_start_epoch`.
    pub field: String,
    /// Human-readable description of the violation.
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Top-level error type for the whole crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// One or more configuration violations, collected rather than
    /// first-failure so a bad config is fixable in one pass.
    #[error("invalid configuration:\n{}", format_issues(.0))]
    Config(Vec<ConfigIssue>),

    /// Dataset layout, image decoding, or other input-data problems.
    #[error("data error: {0}")]
    Data(String),

    /// I/O while reading or writing artifacts (checkpoints, CSVs, images).
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Non-finite losses, shape violations inside the graph, checkpoint
    /// hash mismatches: anything that makes continued computation unsound.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  - {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    /// Convenience constructor for a single-issue config error.
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config(vec![ConfigIssue {
            field: field.to_string(),
            message: message.into(),
        }])
    }

    pub fn data(message: impl Into<String>) -> Self {
        Error::Data(message.into())
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Error::Numeric(message.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// The process exit code this error category maps to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
