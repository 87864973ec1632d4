use std::path::PathBuf;

use thiserror::Error;

use crate::spec::Diagnostic;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("parameter error at `{key}`: {message}")]
    Param { key: String, message: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite {what} at epoch {epoch}, step {step}")]
    Numeric { epoch: usize, step: usize, what: String },

    #[error("unknown preset `{name}`; valid presets: {}", valid.join(", "))]
    Registry { name: String, valid: Vec<String> },

    #[error("unsupported kind `{0}`: the runtime cannot execute this layer")]
    UnsupportedKind(String),

    #[error("format error in {}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("{} error diagnostic(s): {}", .0.len(), summarize(.0))]
    Diagnostics(Vec<Diagnostic>),

    #[error("cancelled")]
    Cancelled,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
}

fn summarize(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| format!("{}: {}", d.path, d.message))
        .collect::<Vec<_>>()
        .join("; ")
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
