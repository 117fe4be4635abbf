use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{build_mask, forward_with_attention, ModelConfig};
use crate::plan::dropmask::{keep_count, DropMask};
use crate::token::TokenGrid;

/// Average attention received by each spatial position when it acts as a
/// key, pooled over layers, heads, query rows, and frames. `maps` are
/// (T*N) x (T*N) row-stochastic attention matrices.
pub fn attention_received_scores(maps: &[Tensor], frames: usize, n: usize) -> Result<Vec<f64>> {
    if maps.is_empty() || frames == 0 || n == 0 {
        return Err(Error::DegenerateInput("no attention maps".into()));
    }
    let rows = frames * n;
    let mut total = vec![0.0f64; n];
    for m in maps {
        if m.rows() != rows || m.cols() != rows {
            return Err(Error::ShapeMismatch {
                op: "attention_received_scores",
                left: m.shape.clone(),
                right: vec![rows, rows],
            });
        }
        for q in 0..rows {
            for f in 0..frames {
                for i in 0..n {
                    total[i] += m.at(q, f * n + i);
                }
            }
        }
    }
    let denom = (maps.len() * rows * frames) as f64;
    Ok(total.into_iter().map(|t| t / denom).collect())
}

/// Per-token importance under the trained world model: run one full
/// forward pass on the history and pool the attention each position
/// receives.
pub fn score_attention_wm(
    params: &crate::autodiff::ParamSet,
    cfg: &ModelConfig,
    history: &[TokenGrid],
    actions: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let n = cfg.n_tokens();
    let mask = build_mask(history.len(), n, None);
    let (_, maps) = forward_with_attention(params, cfg, history, actions, &mask)?;
    attention_received_scores(&maps, history.len(), n)
}

/// Keep the round((1-p)N) highest-scoring positions (lowest index wins
/// ties).
pub fn mask_from_scores(scores: &[f64], p: f64) -> Result<DropMask> {
    let n = scores.len();
    if n == 0 {
        return Err(Error::DegenerateInput("empty score vector".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            what: "token importance scores".into(),
        });
    }
    let k = keep_count(n, p);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    DropMask::new(idx, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_token_single_frame_scores_one() {
        let maps = vec![Tensor::from_rows(&[vec![1.0]])];
        let s = attention_received_scores(&maps, 1, 1).unwrap();
        assert_eq!(s, vec![1.0]);
    }

    #[test]
    fn uniform_attention_scores_are_uniform() {
        // 2 frames x 2 tokens, every row uniform over the 4 keys
        let maps = vec![Tensor::new(vec![4, 4], vec![0.25; 16]).unwrap()];
        let s = attention_received_scores(&maps, 2, 2).unwrap();
        for v in &s {
            assert!((v - 0.25).abs() < 1e-12);
        }
        // row-stochastic maps: scores sum to 1/frames per frame => total 1
        assert!((s.iter().sum::<f64>() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn concentrated_attention_ranks_the_sink_first() {
        // every query attends fully to position 1 of frame 0
        let mut m = Tensor::zeros(&[4, 4]);
        for q in 0..4 {
            m.set(q, 1, 1.0);
        }
        let s = attention_received_scores(&[m], 2, 2).unwrap();
        assert!(s[1] > s[0]);
        let mask = mask_from_scores(&s, 0.5).unwrap();
        assert_eq!(mask.kept(), &[1]);
    }

    #[test]
    fn tie_scores_keep_lowest_indices() {
        let mask = mask_from_scores(&[1.0, 1.0, 1.0, 1.0], 0.5).unwrap();
        assert_eq!(mask.kept(), &[0, 1]);
    }

    #[test]
    fn wrong_map_shape_errors() {
        let maps = vec![Tensor::zeros(&[3, 3])];
        assert!(attention_received_scores(&maps, 2, 2).is_err());
    }

    #[test]
    fn model_scores_have_right_length_and_mass() {
        use crate::model::init_params;
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;
        let cfg = ModelConfig {
            n_layers: 1,
            n_heads: 2,
            embed_dim: 16,
            grid_h: 2,
            grid_w: 2,
            token_dim: 4,
            action_dim: 2,
            action_proj_dim: 4,
            history_len: 2,
            dropout_prob: 0.0,
        };
        let params = init_params(&cfg, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hist: Vec<TokenGrid> = (0..2)
            .map(|f| {
                TokenGrid::new(
                    Tensor::randn(&mut rng, &[cfg.n_tokens(), cfg.token_dim], 0.5),
                    f,
                )
            })
            .collect();
        let acts = vec![vec![0.1, 0.0], vec![0.0, 0.1]];
        let s = score_attention_wm(&params, &cfg, &hist, &acts).unwrap();
        assert_eq!(s.len(), cfg.n_tokens());
        // rows are stochastic, so pooled mass over positions is 1/frames
        assert!((s.iter().sum::<f64>() - 0.5).abs() < 1e-9);
    }
}
