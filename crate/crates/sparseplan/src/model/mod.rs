//! Causal transformer world model with randomized grouped attention.

mod config;
mod mask;
mod net;
mod rollout;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use config::{MaskPolicy, ModelConfig};
pub use mask::{build_mask, sample_group_assignment, GroupAssignment};
pub use net::{forward, forward_with_attention, init_params};
#[cfg(test)]
pub(crate) use net::build_forward;
pub use rollout::{rollout, CallCounter, PredictionCorruption};
pub use train::{train_step, TrainSequence};

use crate::autodiff::{self, ParamSet};
use crate::error::Result;

/// Checkpoint sidecar contents: architecture, the training-time
/// attention policy, and the seed of the frozen tokenizer the training
/// data was produced with (so downstream planning and analysis rebuild
/// the same token basis).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config: ModelConfig,
    pub mask_policy: MaskPolicy,
    pub tokenizer_seed: u64,
}

/// Write the parameter container and a `<path>.json` sidecar.
pub fn save_model(
    path: &Path,
    params: &ParamSet,
    cfg: &ModelConfig,
    policy: MaskPolicy,
    tokenizer_seed: u64,
) -> Result<()> {
    let meta = ModelMeta {
        config: cfg.clone(),
        mask_policy: policy,
        tokenizer_seed,
    };
    autodiff::save_checkpoint(path, params, serde_json::to_value(&meta)?)?;
    let sidecar = path.with_extension(format!(
        "{}json",
        path.extension()
            .map(|e| format!("{}.", e.to_string_lossy()))
            .unwrap_or_default()
    ));
    std::fs::write(sidecar, serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(ParamSet, ModelMeta)> {
    let (params, meta) = autodiff::load_checkpoint(path)?;
    let meta: ModelMeta = serde_json::from_value(meta)?;
    meta.config.validate()?;
    Ok((params, meta))
}
