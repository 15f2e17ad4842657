//! Command-line runner for `sigrl`: datasets, configuration and oracles
//! wired into reproducible runs with JSON reports.
//!
//! The `sigrl` binary is a thin clap front end over [`commands`]; the
//! functions there are usable directly from tests and scripts.

pub mod backend;
pub mod commands;
pub mod config;
pub mod io;

pub use commands::{Run, Summary};
pub use config::{OracleMode, RunConfig};

/// Exit code for a run with hard failures.
pub const EXIT_FAILURE: i32 = 1;
/// Exit code for configuration errors.
pub const EXIT_CONFIG: i32 = 2;

/// Maps an error to the process exit code.
pub fn exit_code(err: &sigrl::Error) -> i32 {
    match err.root() {
        sigrl::Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}
