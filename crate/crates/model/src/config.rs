use serde::{Deserialize, Serialize};

use crate::ModelError;

/// Shape of the encoder-decoder network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    /// Encoder and decoder each get this many blocks.
    pub n_layers: usize,
    pub d_ffn: usize,
    /// Edge count plus one; class 0 is padding.
    pub n_classes: usize,
    pub dropout: f64,
    pub max_len: usize,
}

impl ModelConfig {
    /// Small configuration that trains on one CPU core in minutes.
    pub fn desk(n_classes: usize) -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ffn: 256,
            n_classes,
            dropout: 0.1,
            max_len: 64,
        }
    }

    /// Configuration used by the larger published setup.
    pub fn full(n_classes: usize) -> Self {
        Self {
            d_model: 512,
            n_heads: 8,
            n_layers: 6,
            d_ffn: 2048,
            n_classes,
            dropout: 0.1,
            max_len: 128,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.d_model == 0 || self.n_heads == 0 || self.d_ffn == 0 || self.max_len == 0 {
            return bad("widths, heads and max_len must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}
