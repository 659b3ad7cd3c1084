//! Command-line driver: slot sampling, the assessment modes and their
//! CSV/JSON reports.

pub mod config;
pub mod profile;
pub mod run;

pub use config::{Mode, RunConfig};
pub use run::run;

/// Process exit code for a run result: 0 on success, 2 for bad input, 3 when
/// a solver or fitting step fails.
pub fn exit_code(result: &rsc_core::Result<Vec<String>>) -> i32 {
    match result {
        Ok(_) => 0,
        Err(e) if e.is_validation() => 2,
        Err(_) => 3,
    }
}
