//! Experiment driver for the streaming fine-tuning toy: configuration,
//! run orchestration, metrics logs, checkpoints and plot export.

use std::io;
use std::path::{Path, PathBuf};

pub mod checkpoint;
pub mod config;
pub mod export;
pub mod metrics;
pub mod run;
pub mod verify;

pub use checkpoint::Checkpoint;
pub use config::{Mode, RunConfig};
pub use metrics::MetricsRecord;
pub use run::{run_training, RunSummary};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Core(#[from] astrolabe_core::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("parse: {0}")]
    Parse(String),
}

impl RunError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        RunError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
