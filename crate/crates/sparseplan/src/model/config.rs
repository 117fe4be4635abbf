use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the causal transformer world model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub embed_dim: usize,
    /// token grid height (Hp)
    pub grid_h: usize,
    /// token grid width (Wp)
    pub grid_w: usize,
    /// per-token feature dimension D
    pub token_dim: usize,
    pub action_dim: usize,
    pub action_proj_dim: usize,
    /// frames of context beyond the current one; the model sees h+1 frames
    pub history_len: usize,
    pub dropout_prob: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layers: 2,
            n_heads: 4,
            embed_dim: 64,
            grid_h: 4,
            grid_w: 4,
            token_dim: 16,
            action_dim: 2,
            action_proj_dim: 8,
            history_len: 2,
            dropout_prob: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn n_tokens(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if self.action_proj_dim == 0 {
            return Err(Error::Config("action_proj_dim must be > 0".into()));
        }
        if self.n_tokens() < 2 {
            return Err(Error::Config("need at least 2 tokens".into()));
        }
        Ok(())
    }
}

/// Spatial attention policy used while training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskPolicy {
    /// randomized two-group spatial masking
    Grouped,
    /// causal-only attention
    Full,
}
