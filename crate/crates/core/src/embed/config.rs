use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of every expression embedding.
pub const EMBED_DIM: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// Triplet margin.
    pub margin: f64,
    /// Output channels of the strided 3×3 convolutions of the global backbone.
    pub backbone_widths: Vec<usize>,
    /// Backbone feature size `D_b`.
    pub backbone_dim: usize,
    /// Output channels of the four local convolutions; the last is `d_loc`.
    pub local_widths: [usize; 4],
    pub attention_heads: usize,
    /// Query/key channels of the local self-attention.
    pub attention_key_dim: usize,
    /// Hidden width of the MLP mapping concatenated local features to 16.
    pub head_hidden: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            margin: 0.2,
            backbone_widths: vec![16, 32, 64, 128],
            backbone_dim: 128,
            local_widths: [16, 32, 64, 64],
            attention_heads: 1,
            attention_key_dim: 8,
            head_hidden: 128,
        }
    }
}

impl EmbeddingConfig {
    /// Narrow networks for fixtures and quick experiments.
    pub fn compact() -> Self {
        EmbeddingConfig {
            margin: 0.2,
            backbone_widths: vec![8, 16, 16, 32],
            backbone_dim: 32,
            local_widths: [4, 8, 8, 8],
            attention_heads: 1,
            attention_key_dim: 4,
            head_hidden: 32,
        }
    }

    pub fn local_dim(&self) -> usize {
        self.local_widths[3]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        if self.backbone_widths.is_empty()
            || self.backbone_widths.contains(&0)
            || self.backbone_dim == 0
            || self.local_widths.contains(&0)
            || self.head_hidden == 0
        {
            return Err(Error::Config("network widths must be positive".into()));
        }
        let h = self.attention_heads;
        if h == 0 || self.local_dim() % h != 0 || self.attention_key_dim % h != 0 || self.attention_key_dim == 0 {
            return Err(Error::Config(format!(
                "attention channels ({} values, {} keys) must be divisible by {h} heads",
                self.local_dim(),
                self.attention_key_dim
            )));
        }
        Ok(())
    }
}
