use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("backup `{backup}` produced a non-finite value at state {state} (iteration {iteration})")]
    NonFiniteValue {
        backup: String,
        state: usize,
        iteration: usize,
    },

    #[error("invalid planner spec `{0}`")]
    InvalidSpec(String),

    #[error("invalid environment: {}", .0.join("; "))]
    InvalidEnvironment(Vec<String>),

    #[error("malformed map: {}", .0.join("; "))]
    MalformedMap(Vec<String>),

    #[error("invalid config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
