use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{ParamSet, Tensor};
use crate::env::Dataset;
use crate::error::{Error, Result};
use crate::model::{build_mask, forward, ModelConfig};
use crate::plan::sample_mask_random;
use crate::token::TokenGrid;

/// Mean and spread of the relative prediction error over independent
/// dropout masks, plus the number of zero-norm target tokens excluded.
#[derive(Debug, Clone)]
pub struct PredErrStats {
    pub mean: f64,
    pub std: f64,
    pub excluded: usize,
}

/// Per-token relative L2 distance ‖ẑ−z‖/‖z‖ between matching rows.
/// Zero-norm targets are excluded and counted.
pub fn relative_errors(pred: &Tensor, target: &Tensor) -> Result<(Vec<f64>, usize)> {
    if pred.shape != target.shape {
        return Err(Error::ShapeMismatch {
            op: "relative_errors",
            left: pred.shape.clone(),
            right: target.shape.clone(),
        });
    }
    let mut out = Vec::with_capacity(pred.rows());
    let mut excluded = 0;
    for r in 0..pred.rows() {
        let tnorm: f64 = target.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if tnorm == 0.0 {
            excluded += 1;
            continue;
        }
        let dnorm: f64 = pred
            .row(r)
            .iter()
            .zip(target.row(r))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        out.push(dnorm / tnorm);
    }
    Ok((out, excluded))
}

/// Sliding-window validation sequences from a dataset: h+1 context
/// frames, their actions, and the next frame as target.
pub fn validation_sequences(
    ds: &Dataset,
    history_len: usize,
    limit: usize,
) -> Vec<(Vec<TokenGrid>, Vec<Vec<f64>>, TokenGrid)> {
    let mut out = Vec::new();
    let ctx = history_len + 1;
    'outer: for ep in &ds.episodes {
        if ep.tokens.len() < ctx + 1 {
            continue;
        }
        for start in 0..ep.tokens.len() - ctx {
            let history = ep.tokens[start..start + ctx].to_vec();
            let actions: Vec<Vec<f64>> = ep.actions[start..start + ctx]
                .iter()
                .map(|a| a.to_vec())
                .collect();
            let target = ep.tokens[start + ctx].clone();
            out.push((history, actions, target));
            if out.len() == limit {
                break 'outer;
            }
        }
    }
    out
}

/// Mean relative L2 distance of subset predictions at dropout fraction
/// `drop_p`, mean±std over `trials` independent masks.
pub fn prediction_error(
    params: &ParamSet,
    cfg: &ModelConfig,
    ds: &Dataset,
    drop_p: f64,
    trials: usize,
    seed: u64,
) -> Result<PredErrStats> {
    if trials == 0 {
        return Err(Error::Config("prediction_error needs trials >= 1".into()));
    }
    let seqs = validation_sequences(ds, cfg.history_len, 200);
    if seqs.is_empty() {
        return Err(Error::DegenerateInput(
            "dataset too short for validation sequences".into(),
        ));
    }
    let n = cfg.n_tokens();
    let mut trial_means = Vec::with_capacity(trials);
    let mut excluded_total = 0;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64 + 1);
        let mask = if drop_p == 0.0 {
            crate::plan::DropMask::all(n)
        } else {
            sample_mask_random(&mut rng, n, drop_p)?
        };
        let per_seq: Vec<Result<(Vec<f64>, usize)>> = seqs
            .par_iter()
            .map(|(hist, acts, target)| {
                let attn_mask = build_mask(hist.len(), mask.len(), None);
                let pred = forward(params, cfg, hist, acts, &attn_mask, Some(mask.kept()))?;
                relative_errors(&pred, &target.select(mask.kept()))
            })
            .collect();
        let mut errs = Vec::new();
        for r in per_seq {
            let (e, ex) = r?;
            errs.extend(e);
            excluded_total += ex;
        }
        if errs.is_empty() {
            return Err(Error::DegenerateInput(
                "every target token had zero norm".into(),
            ));
        }
        trial_means.push(errs.iter().sum::<f64>() / errs.len() as f64);
    }
    let mean = trial_means.iter().sum::<f64>() / trials as f64;
    let var = trial_means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / trials as f64;
    Ok(PredErrStats {
        mean,
        std: var.sqrt(),
        excluded: excluded_total,
    })
}
