//! Experiment runner behind the `metabayes` binary: configuration, the
//! benchmark grid, the width sweep and the equivalence certifier.

pub mod certify;
pub mod config;
pub mod runner;

use metabayes::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_CERTIFICATION: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

/// Process exit code for an error that aborted a command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::DivergedLoss { .. } => EXIT_DIVERGED,
        _ => EXIT_CONFIG,
    }
}
