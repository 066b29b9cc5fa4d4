//! Desk-scale reproductions of the mortar, convergence, efficiency, screen
//! and foam studies, driven by flat text configurations.

pub mod config;
pub mod studies;

pub use config::{ConfigError, Study, StudyConfig};
pub use studies::{run_study, BenchError};
