use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Stream(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("png: {0}")]
    Image(#[from] image::ImageError),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("empty frame")]
    EmptyFrame,
    #[error("resolution mismatch: expected {expected:?}, found {found:?} ({context})")]
    ResolutionMismatch {
        expected: (u32, u32),
        found: (u32, u32),
        context: String,
    },
    #[error("singular covariance")]
    SingularCovariance,
    #[error("unknown object {0}")]
    UnknownObject(u32),
    #[error("object {0} has no views")]
    NoViews(u32),
    #[error("empty object set {0}")]
    EmptySet(u32),
    #[error("no cameras")]
    NoCameras,
    #[error("point cloud is empty")]
    EmptyPointCloud,
    #[error("object registry is empty")]
    EmptyRegistry,
    #[error("loss became non-finite at iteration {iteration}")]
    Diverged { iteration: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
