use std::io;
use std::path::Path;

use crate::{dataset, evaluate, imgproc, ingest, maskio, pipeline, review, timing, transfer};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-wide error. Each module keeps its own error enum; this type unifies
/// them for pipeline and CLI use.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Mask(#[from] maskio::MaskError),
    #[error(transparent)]
    Transfer(#[from] transfer::TransferError),
    #[error(transparent)]
    Filter(#[from] imgproc::FilterError),
    #[error(transparent)]
    Eval(#[from] evaluate::EvalError),
    #[error(transparent)]
    Timing(#[from] timing::TimingError),
    #[error(transparent)]
    Review(#[from] review::ReviewError),
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Config(#[from] pipeline::ConfigError),
    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: String, source: Box<Error> },
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{path}: {source}")]
    Image { path: String, source: image::ImageError },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    pub(crate) fn json(path: impl AsRef<Path>, source: serde_json::Error) -> Self {
        Error::Json { path: path.as_ref().display().to_string(), source }
    }

    pub(crate) fn image(path: impl AsRef<Path>, source: image::ImageError) -> Self {
        Error::Image { path: path.as_ref().display().to_string(), source }
    }

    /// True when the error stems from bad user input (parameters, config,
    /// malformed files) rather than a failure while executing a stage.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Ingest(e) => e.is_validation(),
            Error::Mask(_) | Error::Filter(_) | Error::Timing(_) | Error::Config(_) => true,
            Error::Transfer(e) => !matches!(e, transfer::TransferError::OrphanMasks(_)),
            Error::Eval(_) => true,
            Error::Review(e) => e.is_validation(),
            Error::Dataset(_) => true,
            Error::Json { .. } => true,
            Error::Stage { .. } | Error::Io { .. } | Error::Image { .. } => false,
        }
    }
}
