//! Command-line front end: experiment presets, file formats and the `snc` binary.

pub mod commands;
pub mod config;
pub mod experiments;
pub mod output;

use std::fmt;

use snc_core::SncError;

/// Invalid user-supplied configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Process exit code for an error: 2 configuration, 3 numerical, 4 too large,
/// 1 anything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some()
            || cause.downcast_ref::<clap::Error>().is_some()
        {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<SncError>() {
            return snc_exit_code(e);
        }
    }
    1
}

fn snc_exit_code(e: &SncError) -> i32 {
    match e {
        SncError::TooLarge(_) => 4,
        SncError::Config(_)
        | SncError::DimMismatch { .. }
        | SncError::InvalidContext(_)
        | SncError::Parse(_)
        | SncError::Json(_)
        | SncError::MissingModel => 2,
        SncError::Io(_) => 1,
        _ => 3,
    }
}
