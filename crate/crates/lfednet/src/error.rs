use std::io;
use std::path::PathBuf;

use lfednet_core::data::DataError;
use lfednet_core::grid::GridError;
use lfednet_core::metrics::MetricsError;
use lfednet_core::net::NetError;
use lfednet_core::taskgrad::TaskGradError;
use lfednet_core::train::TrainError;

/// Exit status for a malformed command line or configuration.
pub const EXIT_USAGE: i32 = 1;
/// Exit status for unreadable or invalid input data.
pub const EXIT_DATA: i32 = 2;
/// Exit status for a solver or training failure.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{}: {message}", path.display())]
    Schema { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Records { path: PathBuf, source: DataError },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Task(#[from] TaskGradError),
    #[error(transparent)]
    Net(#[from] NetError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Train(TrainError::Config(_)) => EXIT_USAGE,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Json { .. }
            | Error::Schema { .. }
            | Error::Records { .. }
            | Error::Data(_)
            | Error::Grid(_)
            | Error::Train(TrainError::EmptyDataset)
            | Error::Metrics(MetricsError::Length(..))
            | Error::Metrics(MetricsError::NonPositiveActual(..))
            | Error::Metrics(MetricsError::Empty) => EXIT_DATA,
            Error::Train(_) | Error::Metrics(_) | Error::Task(_) | Error::Net(_) => EXIT_NUMERICAL,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
