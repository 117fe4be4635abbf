use std::sync::atomic::{AtomicU64, Ordering};

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::mask::build_mask;
use crate::model::net::build_forward;

/// Counts world-model forward invocations. Shards may be kept per worker
/// and merged by summation.
#[derive(Debug, Default)]
pub struct CallCounter(AtomicU64);

impl CallCounter {
    pub fn new() -> Self {
        CallCounter::default()
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn merge(&self, other: &CallCounter) {
        self.add(other.get());
    }
}

/// Corruption applied to each rollout prediction: keep a random fraction,
/// zero the dropped tokens, and perturb the kept ones with Gaussian noise
/// scaled by the token norm. Resampled at every forward call.
#[derive(Debug, Clone, Copy)]
pub struct PredictionCorruption {
    pub sigma: f64,
    pub drop: f64,
}

/// Autoregressive H-step rollout over kept token positions.
///
/// `frames` is the context (oldest first, each k x D at `positions`),
/// `past_actions` the actions between consecutive context frames
/// (`frames.len() - 1` of them). The plan supplies one action per
/// predicted step; a sliding window keeps the most recent h+1 frames.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    params: &ParamSet,
    cfg: &ModelConfig,
    frames: &[Tensor],
    past_actions: &[Vec<f64>],
    plan: &[Vec<f64>],
    positions: &[usize],
    counter: &CallCounter,
    mut corruption: Option<(&mut ChaCha8Rng, PredictionCorruption)>,
) -> Result<Tensor> {
    if plan.is_empty() {
        return Err(Error::DegenerateInput("rollout horizon H = 0".into()));
    }
    if frames.is_empty() {
        return Err(Error::DegenerateInput("empty history".into()));
    }
    if past_actions.len() + 1 != frames.len() {
        return Err(Error::DegenerateInput(format!(
            "{} past actions for {} context frames",
            past_actions.len(),
            frames.len()
        )));
    }
    let mut window: Vec<Tensor> = frames.to_vec();
    let mut acts: Vec<Vec<f64>> = past_actions.to_vec();
    let mut last = None;
    for action in plan {
        acts.push(action.clone());
        while window.len() > cfg.history_len + 1 {
            window.remove(0);
            acts.remove(0);
        }
        debug_assert_eq!(acts.len(), window.len());
        let mask = build_mask(window.len(), positions.len(), None);
        let refs: Vec<&Tensor> = window.iter().collect();
        let fg = build_forward(params, cfg, &refs, &acts, positions, &mask, None)?;
        counter.add(1);
        let mut pred = fg.g.value(fg.prediction).clone();
        if let Some((rng, c)) = corruption.as_mut() {
            corrupt(&mut pred, rng, *c)?;
        }
        window.push(pred.clone());
        last = Some(pred);
    }
    Ok(last.unwrap())
}

fn corrupt(pred: &mut Tensor, rng: &mut ChaCha8Rng, c: PredictionCorruption) -> Result<()> {
    use rand::Rng;
    if c.sigma == 0.0 && c.drop == 0.0 {
        return Ok(());
    }
    let (rows, cols) = (pred.rows(), pred.cols());
    for r in 0..rows {
        if c.drop > 0.0 && rng.gen::<f64>() < c.drop {
            for j in 0..cols {
                pred.set(r, j, 0.0);
            }
            continue;
        }
        if c.sigma > 0.0 {
            let norm: f64 = pred.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            let std = c.sigma * norm;
            for j in 0..cols {
                let z: f64 = StandardNormal.sample(rng);
                let v = pred.at(r, j) + std * z;
                pred.set(r, j, v);
            }
        }
    }
    Ok(())
}
