use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{adam_step, AdamState, GradSet, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::model::config::{MaskPolicy, ModelConfig};
use crate::model::mask::{build_mask, sample_group_assignment};
use crate::model::net::build_forward;
use crate::token::TokenGrid;

/// One training sequence: h+1 context frames, their actions, and the
/// next-frame target.
#[derive(Debug, Clone)]
pub struct TrainSequence {
    pub history: Vec<TokenGrid>,
    pub actions: Vec<Vec<f64>>,
    pub target: TokenGrid,
}

/// Per-token MSE (Eq.-style: summed squared error over all token
/// features divided by the token count N) for one sequence.
fn sequence_loss_and_grads(
    params: &ParamSet,
    cfg: &ModelConfig,
    seq: &TrainSequence,
    seed: u64,
    policy: MaskPolicy,
) -> Result<(f64, GradSet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = match policy {
        MaskPolicy::Grouped => Some(sample_group_assignment(&mut rng, cfg.n_tokens())?),
        MaskPolicy::Full => None,
    };
    let mask = build_mask(seq.history.len(), cfg.n_tokens(), groups.as_ref());
    let frames: Vec<&Tensor> = seq.history.iter().map(|h| &h.tokens).collect();
    let positions: Vec<usize> = (0..cfg.n_tokens()).collect();
    let mut fg = build_forward(
        params,
        cfg,
        &frames,
        &seq.actions,
        &positions,
        &mask,
        Some(&mut rng),
    )?;
    let target = fg.g.leaf(seq.target.tokens.clone());
    let loss = fg
        .g
        .sq_diff_sum_scaled(fg.prediction, target, cfg.n_tokens() as f64)?;
    let loss_val = fg.g.value(loss).data[0];
    if !loss_val.is_finite() {
        return Err(Error::NonFinite {
            what: "training loss".into(),
        });
    }
    let grads = fg.g.backward(loss)?;
    let mut out = GradSet::new();
    for (name, id) in &fg.param_leaves {
        if let Some(g) = &grads[id.0] {
            match out.get_mut(name) {
                Some(acc) => {
                    for (a, b) in acc.data.iter_mut().zip(&g.data) {
                        *a += b;
                    }
                }
                None => {
                    out.insert(name.clone(), g.clone());
                }
            }
        }
    }
    Ok((loss_val, out))
}

/// One Adam step over a batch. Each sequence gets a fresh group
/// assignment; the loss is the batch mean of per-sequence token MSE.
pub fn train_step(
    params: &mut ParamSet,
    cfg: &ModelConfig,
    batch: &[TrainSequence],
    rng: &mut ChaCha8Rng,
    adam: &mut AdamState,
    policy: MaskPolicy,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::DegenerateInput("empty batch".into()));
    }
    let seeds: Vec<u64> = (0..batch.len()).map(|_| rng.gen()).collect();
    let results: Vec<Result<(f64, GradSet)>> = batch
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(seq, &seed)| sequence_loss_and_grads(params, cfg, seq, seed, policy))
        .collect();

    let scale = 1.0 / batch.len() as f64;
    let mut total_loss = 0.0;
    let mut grads = GradSet::new();
    for (i, r) in results.into_iter().enumerate() {
        let (loss, g) = r.map_err(|e| match e {
            Error::NonFinite { what } => Error::NonFinite {
                what: format!("{what} (batch index {i})"),
            },
            other => other,
        })?;
        total_loss += loss * scale;
        for (name, t) in g {
            match grads.get_mut(&name) {
                Some(acc) => {
                    for (a, b) in acc.data.iter_mut().zip(&t.data) {
                        *a += b * scale;
                    }
                }
                None => {
                    let mut t = t;
                    for v in t.data.iter_mut() {
                        *v *= scale;
                    }
                    grads.insert(name, t);
                }
            }
        }
    }
    adam_step(params, &grads, adam)?;
    Ok(total_loss)
}
