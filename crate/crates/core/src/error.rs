//! Error types shared across the engine.

use std::fmt;

use thiserror::Error;

use crate::model::NodeId;

pub type Result<T> = std::result::Result<T, MemoryError>;

/// A single broken invariant found while validating a record or a batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub subject: String,
    pub rule: String,
}

impl Violation {
    pub fn new(subject: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.rule)
    }
}

fn join_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("invariant violation: {}", join_violations(.0))]
    Invariant(Vec<Violation>),

    #[error("snapshot error at byte {offset} (line {line}): {message}")]
    Snapshot {
        offset: u64,
        line: usize,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("hierarchy absent: no active category hierarchy")]
    HierarchyAbsent,

    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),

    #[error("oracle output failed validation: {0}")]
    OracleFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MemoryError {
    /// True for the errors that come from the oracle seam rather than from data
    /// or configuration.
    pub fn is_oracle(&self) -> bool {
        matches!(
            self,
            MemoryError::OracleUnavailable(_) | MemoryError::OracleFormat(_)
        )
    }
}
