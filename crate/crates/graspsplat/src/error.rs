use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Exit code for malformed or missing input.
pub const EXIT_INVALID_INPUT: i32 = 2;
/// Exit code for a pipeline stage that ran but could not produce a result.
pub const EXIT_FAILURE: i32 = 3;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: file not found", .0.display())]
    Missing(PathBuf),
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("{}: missing PLY property `{name}`", path.display())]
    MissingProperty { path: PathBuf, name: String },
    #[error("{}: {source}", path.display())]
    Image { path: PathBuf, source: image::ImageError },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{}: {source}", path.display())]
    InvalidFile { path: PathBuf, source: graspsplat_core::Error },
    #[error("{0}")]
    Core(#[from] graspsplat_core::Error),
    #[error("{0}")]
    Failed(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: &Path, source: io::Error) -> Self {
        if source.kind() == io::ErrorKind::NotFound {
            Error::Missing(path.to_path_buf())
        } else {
            Error::Io { path: path.to_path_buf(), source }
        }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        Error::Format { path: path.to_path_buf(), message: message.into() }
    }

    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        use graspsplat_core::Error as C;
        match self {
            Error::Failed(_) => EXIT_FAILURE,
            Error::Core(C::NonFiniteLoss(_) | C::EmptyCloud | C::TooFewJoints { .. } | C::EmptyDataset) => EXIT_FAILURE,
            _ => EXIT_INVALID_INPUT,
        }
    }
}
