use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("reference index {index} out of range for model of {n} references")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("model of {requested} references refused: the sorted distance structure needs O(n^2) memory ({bytes} bytes) and the cap is {cap} references")]
    ModelTooLarge { requested: usize, cap: usize, bytes: u64 },

    #[error("no usable reference patches (all cluster representatives were degenerate)")]
    NoUsableReferences,

    #[error("model was not built locally; cluster membership is unavailable")]
    MissingMembership,

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
