use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] deepar_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// `2` for bad input or configuration, `1` for failures while running.
    pub fn exit_code(&self) -> i32 {
        use deepar_core::Error as C;
        match self {
            Error::Core(C::NonFiniteGradient { .. } | C::NonFiniteLoss { .. } | C::NonDeterministic { .. } | C::Diverged(_)) => 1,
            Error::Core(_) => 2,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            Error::Io { .. } => 1,
            Error::Parse { .. } | Error::Invalid(_) => 2,
            Error::Runtime(_) => 1,
        }
    }
}
