//! Pipeline commands and run configuration for the `dsco` binary.

pub mod config;
pub mod pipeline;

use dsco_core::DscoError;

pub use config::RunConfig;

/// Process exit status for a failed command.
pub fn exit_code(err: &DscoError) -> i32 {
    match err {
        DscoError::Config(_) => 2,
        DscoError::Numerical { .. } | DscoError::TrainingFailure { .. } => 3,
        DscoError::Refusal(_) => 4,
        _ => 1,
    }
}
