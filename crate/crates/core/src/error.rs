//! Shared error type for the assessment library.

use thiserror::Error;

/// Errors surfaced by any part of the pipeline.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("audiogram {id} has an ambiguous shape and cannot be classified")]
    UnclassifiedAudiogram { id: String },

    #[error("malformed catalog: {0}")]
    MalformedCatalog(String),

    #[error("signal is silent (zero rms) in {context}")]
    SilentSignal { context: &'static str },

    #[error("sample rate mismatch: {left} Hz vs {right} Hz")]
    SampleRateMismatch { left: u32, right: u32 },

    #[error("zero-energy impulse response {id}")]
    ZeroEnergyRir { id: String },

    #[error("provider {provider} lacks capability: {capability}")]
    Capability { provider: String, capability: String },

    #[error("enhancement provider {provider} failed on {utterance_id}: {message}")]
    EnhancementFailed {
        provider: String,
        utterance_id: String,
        message: String,
    },

    #[error("feature/parameter dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite activation detected in layer {layer}")]
    NonFiniteActivation { layer: &'static str },

    #[error("loss became NaN at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    #[error("score table rejected: {0}")]
    ScoreTable(String),

    #[error("missing assets:\n{}", .0.join("\n"))]
    MissingAssets(Vec<String>),

    #[error("prediction/target key mismatch; orphan keys:\n{}", .0.join("\n"))]
    KeyMismatch(Vec<String>),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("wav format: {0}")]
    WavFormat(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
