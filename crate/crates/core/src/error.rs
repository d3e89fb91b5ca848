use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ArmError>;

#[derive(Debug, Error)]
pub enum ArmError {
    /// A shape or geometry contract was violated. The message names the offending dimension.
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("kernel too large: {extent} + 2*{padding} < {kernel} on {axis} axis")]
    KernelTooLarge {
        axis: &'static str,
        extent: usize,
        kernel: usize,
        padding: usize,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("uninitialized state: {0}")]
    Uninitialized(String),

    #[error("finite-difference oracle produced a non-finite value at coordinate {index}")]
    Oracle { index: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("parse error at position {position}: {msg}")]
    Parse { position: usize, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl ArmError {
    pub fn geometry(msg: impl Into<String>) -> Self {
        ArmError::Geometry(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        ArmError::Data(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ArmError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        ArmError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code for this error class. Documented in the CLI help.
    pub fn exit_code(&self) -> i32 {
        match self {
            ArmError::Geometry(_) | ArmError::KernelTooLarge { .. } => 3,
            ArmError::Data(_) => 4,
            ArmError::Io { .. } | ArmError::Format { .. } => 5,
            ArmError::Config(_) | ArmError::Parse { .. } => 6,
            ArmError::Divergence { .. } | ArmError::NonFinite(_) => 7,
            ArmError::CheckFailed(_) => 8,
            ArmError::Uninitialized(_) | ArmError::Oracle { .. } => 9,
        }
    }
}
