use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// NaN or infinity where a finite value is required.
    #[error("numeric domain error: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("simulation diverged at t = {t:.6} s (step {step}): {what}")]
    Diverged { t: f64, step: usize, what: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error in {source_name}, line {line}: {msg}")]
    Parse { source_name: String, line: usize, msg: String },

    /// A prerequisite file produced by another command is absent.
    #[error("missing {what} at {path}; run `derfdd {producer}` first")]
    MissingArtifact { what: String, path: String, producer: String },

    #[error(transparent)]
    Ml(#[from] derfdd_ml::MlError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
