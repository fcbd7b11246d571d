use std::path::PathBuf;

use pltanh_core::{DataError, ModelError, TrainError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("{path}: {message}")]
    Output { path: PathBuf, message: String },
    #[error("training diverged: {0}")]
    Diverged(TrainError),
    #[error(transparent)]
    Train(TrainError),
    #[error("{0} gradient check(s) failed")]
    GradCheck(usize),
}

impl CliError {
    /// 2 for bad configuration or usage, 3 for file I/O, 4 for divergence,
    /// 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Data(_) | CliError::Output { .. } => 3,
            CliError::Diverged(_) => 4,
            CliError::Train(_) | CliError::GradCheck(_) => 1,
        }
    }

    pub(crate) fn output(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        CliError::Output {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e.root() {
            TrainError::Diverged { .. } => CliError::Diverged(e),
            TrainError::Config(msg) => CliError::Config(msg.clone()),
            TrainError::Model(ModelError::Checkpoint(_)) => CliError::output("checkpoint", e),
            TrainError::Model(m) => CliError::Config(m.to_string()),
            TrainError::Data(DataError::Io { path, .. }) => CliError::output(path.clone(), e),
            _ => CliError::Train(e),
        }
    }
}
