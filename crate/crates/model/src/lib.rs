//! Encoder-decoder Transformer that labels each GPS point with a road edge.
//!
//! Everything is computed in `f64` with explicit backpropagation. The decoder
//! is non-autoregressive: it reads one learned query per position and
//! cross-attends to the encoded trajectory, so output length always equals
//! input length.

pub mod checkpoint;
pub mod config;
pub mod infer;
pub mod input;
pub mod network;
pub mod ops;
pub mod params;
pub mod train;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::ModelConfig;
pub use infer::{attention_ranges, collapse, predict, predict_routes, AttentionRanges, Prediction};
pub use input::{examples, normalize, Example, NormalizedTrajectory};
pub use network::{forward, forward_batch, loss_and_gradients, AttentionRecord, ForwardOutput, Stage};
pub use params::{ComponentMask, Layout, Tag, TensorSpec, Transformer};
pub use train::{adam_step, fine_tune, fine_tune_with, train, AdamConfig, AdamState, TrainConfig, TrainLog};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("degenerate {0} bounds")]
    DegenerateBounds(&'static str),
    #[error("trajectory of length {len} exceeds max_len {max}")]
    TooLong { len: usize, max: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("label {label} outside 1..{n_classes}")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("{labels} labels for {points} points")]
    LabelLength { labels: usize, points: usize },
    #[error("trajectory {0} has no truth labels")]
    MissingTruth(String),
    #[error("fine-tuning mask is empty")]
    EmptyMask,
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("no cross-attention records captured")]
    NoCapture,
    #[error("unsupported checkpoint: {0}")]
    Version(String),
    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
