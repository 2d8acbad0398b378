use std::path::PathBuf;

/// Errors produced anywhere in the simulation and prediction pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("normalized Doppler {f_n} aliases (must be < 0.5)")]
    Aliasing { f_n: f64 },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("covariance factorization failed for f_n = {f_n}, length {len}, loading {epsilon}")]
    Factorization { f_n: f64, len: usize, epsilon: f64 },

    #[error("identifiability: {slots} pilot slots cannot resolve {unknowns} reflection unknowns")]
    Identifiability { slots: usize, unknowns: usize },

    #[error("least-squares system is rank deficient (condition estimate {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error("Levinson-Durbin recursion unstable at order {order} (|k| = {reflection})")]
    Unstable { order: usize, reflection: f64 },

    #[error("insufficient history: need {needed}, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
