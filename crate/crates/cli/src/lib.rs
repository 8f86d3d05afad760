//! Command-line harness for `lvgm`: input parsing, estimator dispatch, `(λ, γ)` sweeps and
//! JSON/CSV reports.

pub mod args;
pub mod error;
pub mod grid;
pub mod io;
pub mod report;
pub mod run;

pub use error::{CliError, CliResult};
