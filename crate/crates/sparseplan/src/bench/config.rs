use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::plan::{PlanConfig, Strategy};

/// One benchmark manifest: which checkpoint to plan with, which
/// (strategy, drop-ratio) cells to run, and how many episodes per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub plan: PlanConfig,
    pub checkpoint: PathBuf,
    pub strategies: Vec<Strategy>,
    pub drop_ratios: Vec<f64>,
    pub episodes: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// run episodes one at a time so wall-time rows are uncontended
    pub timing_serial: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: EnvConfig::default(),
            plan: PlanConfig::default(),
            checkpoint: PathBuf::from("model.ckpt"),
            strategies: vec![Strategy::Full, Strategy::Random],
            drop_ratios: vec![0.0, 0.3, 0.5, 0.9],
            episodes: 30,
            seed: 0,
            out_dir: PathBuf::from("bench-out"),
            timing_serial: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.plan.validate()?;
        if self.episodes == 0 {
            return Err(Error::Config("bench needs episodes > 0".into()));
        }
        if self.strategies.is_empty() || self.drop_ratios.is_empty() {
            return Err(Error::Config(
                "bench needs at least one strategy and one drop ratio".into(),
            ));
        }
        for &p in &self.drop_ratios {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("drop ratio {p} outside [0,1)")));
            }
        }
        if !self.checkpoint.exists() {
            return Err(Error::Config(format!(
                "checkpoint {} not found",
                self.checkpoint.display()
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Stable hex digest of the serialized manifest, recorded so a result
    /// directory can be traced back to its exact configuration.
    pub fn digest(&self) -> String {
        use std::collections::hash_map::DefaultHasher;
        use std::hash::{Hash, Hasher};
        let text = toml::to_string(self).unwrap_or_default();
        let mut h = DefaultHasher::new();
        text.hash(&mut h);
        format!("{:016x}", h.finish())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn bad_drop_ratio_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("m.ckpt");
        std::fs::write(&ckpt, b"x").unwrap();
        let cfg = RunConfig {
            checkpoint: ckpt,
            drop_ratios: vec![1.0],
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn missing_checkpoint_fails_fast() {
        let cfg = RunConfig {
            checkpoint: PathBuf::from("/nonexistent/model.ckpt"),
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn digest_is_stable_and_config_sensitive() {
        let a = RunConfig::default();
        let b = RunConfig {
            seed: 1,
            ..RunConfig::default()
        };
        assert_eq!(a.digest(), a.digest());
        assert_ne!(a.digest(), b.digest());
    }
}
