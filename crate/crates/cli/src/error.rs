use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Input {
        path: PathBuf,
        source: retrieval_uq::Error,
    },
    #[error("invalid argument: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] retrieval_uq::Error),
    #[error("cannot write {}: {source}", path.display())]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn input(path: impl Into<PathBuf>) -> impl FnOnce(retrieval_uq::Error) -> CliError {
        let path = path.into();
        move |source| match source {
            // already names the path
            e @ retrieval_uq::Error::Io { .. } => CliError::Core(e),
            source => CliError::Input { path, source },
        }
    }

    /// 2 for bad input, 3 for numerical failure, 1 when results could not be written.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input { source: e, .. } | CliError::Core(e) if e.is_numerical() => 3,
            CliError::Output { .. } => 1,
            _ => 2,
        }
    }
}
