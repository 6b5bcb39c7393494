use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("non-finite value in {what}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite { what: String, step: Option<usize> },
    #[error("reference signal is silent (segment {segment})")]
    SilentReference { segment: String },
    #[error("signal too short: {0}")]
    TooShort(String),
    #[error("manifest error in {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("IO error")]
    Io(#[from] std::io::Error),
    #[error("WAV error")]
    Wav(#[from] hound::Error),
    #[error("JSON error")]
    Json(#[from] serde_json::Error),
    #[error("TOML decode error")]
    TomlDecode(#[from] toml::de::Error),
    #[error("TOML encode error")]
    TomlEncode(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }
}
