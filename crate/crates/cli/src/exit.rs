//! Exit codes.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | unexpected failure (I/O, serialization) |
//! | 2 | invalid command line or configuration |
//! | 3 | a required checkpoint is missing or unreadable |
//! | 4 | training diverged or an episode produced a non-finite latent |

use std::fmt;

use promptloop_core::Error as CoreError;

pub const OK: u8 = 0;
pub const UNEXPECTED: u8 = 1;
pub const INVALID: u8 = 2;
pub const MISSING_INPUT: u8 = 3;
pub const NUMERICAL: u8 = 4;

/// An error carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

pub fn invalid(message: impl Into<String>) -> anyhow::Error {
    Failure { code: INVALID, message: message.into() }.into()
}

pub fn missing(message: impl Into<String>) -> anyhow::Error {
    Failure { code: MISSING_INPUT, message: message.into() }.into()
}

pub fn code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.code;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Config(_) | CoreError::Usage(_) | CoreError::Specification(_) => INVALID,
                CoreError::Checkpoint(_) => MISSING_INPUT,
                CoreError::Training { .. } | CoreError::Episode { .. } => NUMERICAL,
                CoreError::Io(_) | CoreError::Json(_) => UNEXPECTED,
            };
        }
    }
    UNEXPECTED
}
