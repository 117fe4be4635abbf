use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analysis::hsic::{nhsic, KernelSpec};
use crate::autodiff::Tensor;
use crate::env::Dataset;
use crate::error::{Error, Result};
use crate::plan::{keep_count, sample_mask_random, DropMask};

pub const SWEEP_SAMPLES: usize = 128;
pub const SWEEP_MASKS: usize = 20;

/// One row of the dependence sweep: mean and stddev of
/// nHSIC(kept tokens, state) over independent masks at one drop ratio.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub ratio: f64,
    pub mean: f64,
    pub std: f64,
    pub n_masks: usize,
}

/// Paired (frame tokens, ground-truth state) samples drawn in episode
/// order from a dataset.
pub fn collect_samples(ds: &Dataset, n: usize) -> Result<(Vec<Tensor>, Tensor)> {
    let mut tokens = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n);
    'outer: for ep in &ds.episodes {
        for (tg, st) in ep.tokens.iter().zip(&ep.states) {
            tokens.push(tg.tokens.clone());
            states.push(vec![st.x, st.y]);
            if tokens.len() == n {
                break 'outer;
            }
        }
    }
    if tokens.len() < n {
        return Err(Error::DegenerateInput(format!(
            "dataset has {} samples, sweep needs {n}",
            tokens.len()
        )));
    }
    Ok((tokens, Tensor::from_rows(&states)))
}

fn flatten_kept(tokens: &[Tensor], mask: &DropMask) -> Tensor {
    let rows: Vec<Vec<f64>> = tokens
        .iter()
        .map(|t| {
            mask.kept()
                .iter()
                .flat_map(|&i| t.row(i).iter().copied())
                .collect()
        })
        .collect();
    Tensor::from_rows(&rows)
}

/// Distinct masks at one ratio (a single all-kept mask when nothing is
/// dropped).
fn masks_for_ratio(rng: &mut ChaCha8Rng, n_tokens: usize, ratio: f64, want: usize) -> Result<Vec<DropMask>> {
    if keep_count(n_tokens, ratio) == n_tokens {
        return Ok(vec![DropMask::all(n_tokens)]);
    }
    let mut masks: Vec<DropMask> = Vec::with_capacity(want);
    for _ in 0..want * 50 {
        let m = sample_mask_random(rng, n_tokens, ratio)?;
        if !masks.contains(&m) {
            masks.push(m);
            if masks.len() == want {
                break;
            }
        }
    }
    if masks.is_empty() {
        return Err(Error::Planning("no masks drawn".into()));
    }
    Ok(masks)
}

/// nHSIC between kept-token features (linear kernel) and agent state
/// (RBF, median-heuristic bandwidth), per drop ratio, over independent
/// masks.
pub fn hsic_sweep(
    ds: &Dataset,
    ratios: &[f64],
    masks_per_ratio: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let (tokens, states) = collect_samples(ds, n_samples)?;
    let n_tokens = tokens[0].rows();
    let mut rows = Vec::with_capacity(ratios.len());
    for (ri, &ratio) in ratios.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ri as u64 + 1);
        let masks = masks_for_ratio(&mut rng, n_tokens, ratio, masks_per_ratio)?;
        let vals: Vec<f64> = masks
            .par_iter()
            .map(|m| {
                let x = flatten_kept(&tokens, m);
                nhsic(&x, &states, KernelSpec::Linear, KernelSpec::RbfMedian)
            })
            .collect::<Result<Vec<_>>>()?;
        let k = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / k;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
        rows.push(SweepRow {
            ratio,
            mean,
            std: var.sqrt(),
            n_masks: vals.len(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_dataset, EnvConfig, Tokenizer};

    fn tiny_dataset() -> Dataset {
        let env = EnvConfig::default();
        let tok = Tokenizer::new(0, env.patch_size, 8);
        generate_dataset(&env, &tok, 8, 7, 42).unwrap()
    }

    #[test]
    fn ratio_zero_has_single_mask_and_no_variance() {
        let ds = tiny_dataset();
        let rows = hsic_sweep(&ds, &[0.0], 20, 32, 0).unwrap();
        assert_eq!(rows[0].n_masks, 1);
        assert_eq!(rows[0].std, 0.0);
    }

    #[test]
    fn keep_one_uses_all_distinct_single_token_masks() {
        let ds = tiny_dataset();
        // 16 tokens at p close to 1 keeps one: only 16 distinct masks exist,
        // so request 16
        let rows = hsic_sweep(&ds, &[0.95], 16, 32, 1).unwrap();
        assert_eq!(rows[0].n_masks, 16);
    }

    #[test]
    fn all_values_in_unit_interval() {
        let ds = tiny_dataset();
        let rows = hsic_sweep(&ds, &[0.0, 0.5, 0.75], 5, 32, 2).unwrap();
        for r in &rows {
            assert!(r.mean >= 0.0 && r.mean <= 1.0, "ratio {} mean {}", r.ratio, r.mean);
            assert!(r.std >= 0.0);
        }
    }

    #[test]
    fn insufficient_samples_error() {
        let ds = tiny_dataset(); // 8 episodes x 8 frames = 64 samples
        assert!(hsic_sweep(&ds, &[0.0], 1, 128, 0).is_err());
    }

    #[test]
    fn tokens_carry_state_information() {
        let ds = tiny_dataset();
        let rows = hsic_sweep(&ds, &[0.0], 1, 64, 3).unwrap();
        assert!(rows[0].mean > 0.1, "full tokens nHSIC {}", rows[0].mean);
    }
}
