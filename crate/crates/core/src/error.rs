use std::path::PathBuf;

use mimnet_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MimError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{what}: got shape {got:?}, expected {expected:?}")]
    Dimension {
        what: String,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("loss component `{component}` is not finite ({value})")]
    NonFinite { component: String, value: f64 },
    #[error("config: {0}")]
    Config(String),
    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },
    #[error("unsupported checkpoint version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl MimError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MimError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, msg: impl Into<String>) -> Self {
        MimError::Format { what, msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, MimError>;
