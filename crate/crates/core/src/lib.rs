pub mod benchmark;
pub mod bundle;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod gcr;
pub mod linalg;
pub mod pipeline;
pub mod prototypes;
pub mod represent;
pub mod train;
pub mod vocab;

/// Dense class identifier.
pub type ClassId = u16;

pub use cli::run_command;
pub use error::{Error, Result};
