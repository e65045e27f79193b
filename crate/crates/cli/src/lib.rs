//! Command-line orchestration of the product-matching pipeline: building
//! graphs, rough filtering, channel training, ensembling, Top-K output,
//! evaluation and ablations.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

pub use config::PipelineConfig;
pub use error::CliError;
