use std::path::PathBuf;

use crate::diffcore::ParamStore;

pub type Result<T, E = VdpError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum VdpError {
    #[error("{op}: dimension mismatch on axis `{axis}`: expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{op}: unsupported tensor rank {rank} (shape {shape:?})")]
    Rank {
        op: &'static str,
        rank: usize,
        shape: Vec<usize>,
    },

    #[error("{op}: extent {extent} is not divisible by {factor}; pad the frames to a multiple of {factor}")]
    Divisibility {
        op: &'static str,
        extent: usize,
        factor: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("non-finite gradient in parameter `{leaf}`")]
    NonFiniteGradient { leaf: String },

    #[error("non-finite value at epoch {epoch}, timestep {timestep}: {what}")]
    NonFiniteState {
        epoch: usize,
        timestep: usize,
        what: String,
    },

    /// The objective became NaN/inf; carries the parameters from the last finite epoch.
    #[error("loss diverged at epoch {epoch}; last finite loss {last_loss}")]
    Diverged {
        epoch: usize,
        last_loss: f64,
        last_good: Box<ParamStore>,
    },

    #[error("configuration needs an estimated {estimated_bytes} bytes of tape memory (limit {limit_bytes})")]
    TooLarge {
        estimated_bytes: u64,
        limit_bytes: u64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl VdpError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VdpError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        VdpError::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
