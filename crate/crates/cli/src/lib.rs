//! Experiment runner support: acceptance checks and episode summaries.

pub mod checks;
pub mod summary;
