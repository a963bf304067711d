use std::io;
use std::path::{Path, PathBuf};

use conftrack_core::event::EventError;
use conftrack_core::graph::GraphError;
use conftrack_core::metrics::MetricsError;
use conftrack_core::neural::NeuralError;
use conftrack_core::postprocess::PostprocessError;
use conftrack_core::tracknet::TrackNetError;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) => 3,
            Error::Numeric(_) => 4,
            Error::Io { .. } => 5,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}

impl From<EventError> for Error {
    fn from(e: EventError) -> Self {
        match e {
            EventError::Config(_) => Error::Config(e.to_string()),
            _ => Error::Data(e.to_string()),
        }
    }
}

impl From<GraphError> for Error {
    fn from(e: GraphError) -> Self {
        Error::Data(e.to_string())
    }
}

impl From<MetricsError> for Error {
    fn from(e: MetricsError) -> Self {
        Error::Data(e.to_string())
    }
}

impl From<PostprocessError> for Error {
    fn from(e: PostprocessError) -> Self {
        Error::Data(e.to_string())
    }
}

impl From<NeuralError> for Error {
    fn from(e: NeuralError) -> Self {
        match e {
            NeuralError::NonFinite(_) => Error::Numeric(e.to_string()),
            NeuralError::Spec(_) => Error::Config(e.to_string()),
            _ => Error::Data(e.to_string()),
        }
    }
}

impl From<TrackNetError> for Error {
    fn from(e: TrackNetError) -> Self {
        match e {
            TrackNetError::Neural(n) => n.into(),
            TrackNetError::NonFinite { .. } => Error::Numeric(e.to_string()),
            TrackNetError::Model(_) => Error::Config(e.to_string()),
            TrackNetError::EmptyDataset => Error::Data(e.to_string()),
        }
    }
}
