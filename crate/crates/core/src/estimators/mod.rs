//! Alternative estimators for the sparse-plus-low-rank precision decomposition.

pub mod dantzig;
pub mod em;
pub mod threshold;

pub use dantzig::fit_dantzig;
pub use em::{fit_em_rank, random_init, RankConstraint};
pub use threshold::{fit_two_step_threshold, ThresholdMode, ThresholdParams};
