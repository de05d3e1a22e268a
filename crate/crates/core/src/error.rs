use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = UvaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum UvaError {
    /// A caller supplied inputs that violate an operation's preconditions.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The blended skinning matrix could not be inverted reliably.
    #[error("numeric error: {message} (condition estimate {condition:.3e})")]
    Numeric { message: String, condition: f64 },

    #[error("construction error: {0}")]
    Construction(String),

    #[error("topology mismatch: {0}")]
    Topology(String),

    #[error("training error at iteration {iteration}: {message}")]
    Training { iteration: u64, message: String },

    #[error("edit error: {0}")]
    Edit(String),

    #[error("load error: {0}")]
    Load(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("render error at pixel ({x}, {y}): {source}")]
    Render {
        x: u32,
        y: u32,
        #[source]
        source: Box<UvaError>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl UvaError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        UvaError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        UvaError::Json {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(UvaError::Argument(msg.into()))
}
