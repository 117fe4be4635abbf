use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: left {left:?} vs right {right:?} in {op}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("attention row {row} has every key forbidden")]
    AllMaskedRow { row: usize },
    #[error("non-finite value in {what}")]
    NonFinite { what: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("planning failed: {0}")]
    Planning(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
