use serde::{Deserialize, Serialize};

use crate::embed::EMBED_DIM;
use crate::error::{Error, Result};
use crate::morphable::NUM_EXPR;

/// Length of the joint feature: embedding followed by expression coefficients.
pub const FEATURE_DIM: usize = EMBED_DIM + NUM_EXPR;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub num_aus: usize,
    pub token_dim: usize,
    pub encoder_count: usize,
    pub head_count: usize,
    pub feedforward_dim: usize,
    /// Hidden width of each per-AU view MLP.
    pub view_hidden: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            num_aus: 12,
            token_dim: 32,
            encoder_count: 3,
            head_count: 4,
            feedforward_dim: 128,
            view_hidden: 64,
        }
    }
}

impl ClassifierConfig {
    pub fn with_aus(num_aus: usize) -> Self {
        ClassifierConfig {
            num_aus,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_aus == 0 {
            return Err(Error::Config("at least one AU is required".into()));
        }
        if self.token_dim == 0 || self.feedforward_dim == 0 || self.view_hidden == 0 {
            return Err(Error::Config("classifier widths must be positive".into()));
        }
        if self.head_count == 0 || self.token_dim % self.head_count != 0 {
            return Err(Error::Config(format!(
                "token width {} is not divisible by {} heads",
                self.token_dim, self.head_count
            )));
        }
        Ok(())
    }
}
