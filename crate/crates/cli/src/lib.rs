//! Command-line surface: config-driven experiments, the validation suite,
//! and metric/sample emission.

pub mod commands;
pub mod config;
pub mod output;
pub mod validate;
