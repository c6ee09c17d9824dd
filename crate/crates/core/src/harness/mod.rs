//! Batch harness: configuration, corpus loading, evaluation and the
//! operations behind the command-line verbs.

pub mod commands;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod locomo;

pub use commands::*;
pub use config::HarnessConfig;
pub use eval::{EvalCase, EvalReport};

use crate::error::MemoryError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_ORACLE: i32 = 3;

/// Process exit code for an error: bad invocation or configuration is a
/// usage error, unreachable or misbehaving models are oracle errors, and
/// everything about the stored or supplied data is a data error.
pub fn exit_code(e: &MemoryError) -> i32 {
    match e {
        MemoryError::Config(_) | MemoryError::InvalidArgument(_) => EXIT_USAGE,
        MemoryError::OracleUnavailable(_) | MemoryError::OracleFormat(_) => EXIT_ORACLE,
        _ => EXIT_DATA,
    }
}
