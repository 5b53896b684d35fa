//! Pipeline orchestration for the `coreselect` command: ingestion, PCA,
//! per-class clustering, sampling and evaluation, with a resumable state
//! directory.

pub mod commands;
pub mod config;
pub mod error;
pub mod state;

pub use commands::{
    cmd_cluster, cmd_evaluate, cmd_generate, cmd_inspect, cmd_pipeline, cmd_reduce, cmd_sample, Outcome,
};
pub use config::{Overrides, PipelineConfig};
pub use error::{CliError, Result};
pub use state::PipelineState;
