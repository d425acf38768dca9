use std::path::PathBuf;

use nds_core::baselines::BaselineError;
use nds_core::control::ControlError;
use nds_core::models::ModelError;
use nds_core::systems::SystemError;
use nds_core::training::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} already exists; pass --force to overwrite")]
    Exists(PathBuf),
    #[error("{path} does not match its manifest (expected sha256 {expected}, found {found}); regenerate the dataset")]
    HashMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("no dataset manifest at {0}; run `nds generate` first")]
    MissingDataset(PathBuf),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait IoContext<T> {
    fn at(self, path: &std::path::Path) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: &std::path::Path) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub(crate) fn format_err(path: &std::path::Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}
