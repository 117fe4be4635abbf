use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{adam_step, AdamState, Graph, GradSet, NodeId, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Attentive probe shape: a learnable query cross-attends over the input
/// tokens, followed by a LayerNorm + 2-layer GeLU MLP and a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub feature_dim: usize,
    pub n_heads: usize,
    pub hidden_mult: usize,
    pub out_dim: usize,
    pub lr: f64,
    pub epochs: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            feature_dim: 32,
            n_heads: 4,
            hidden_mult: 4,
            out_dim: 2,
            lr: 1e-5,
            epochs: 500,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "probe feature_dim {} not divisible by n_heads {}",
                self.feature_dim, self.n_heads
            )));
        }
        if self.out_dim == 0 || self.epochs == 0 {
            return Err(Error::Config("probe out_dim and epochs must be > 0".into()));
        }
        Ok(())
    }
}

const PROBE_INIT_STD: f64 = 0.02;

pub fn init_probe(cfg: &ProbeConfig, token_dim: usize, seed: u64) -> Result<ParamSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = cfg.feature_dim;
    let hidden = f * cfg.hidden_mult;
    let mut p = ParamSet::new();
    let mut w = |p: &mut ParamSet, name: &str, shape: &[usize]| {
        p.insert(name, Tensor::randn(&mut rng, shape, PROBE_INIT_STD));
    };
    w(&mut p, "in.w", &[token_dim, f]);
    p.insert("in.b", Tensor::zeros(&[1, f]));
    w(&mut p, "query", &[1, f]);
    for n in ["attn.wq", "attn.wk", "attn.wv", "attn.wo"] {
        w(&mut p, n, &[f, f]);
    }
    p.insert("attn.bo", Tensor::zeros(&[1, f]));
    p.insert("ln.g", Tensor::new(vec![1, f], vec![1.0; f])?);
    p.insert("ln.b", Tensor::zeros(&[1, f]));
    w(&mut p, "mlp.w1", &[f, hidden]);
    p.insert("mlp.b1", Tensor::zeros(&[1, hidden]));
    w(&mut p, "mlp.w2", &[hidden, f]);
    p.insert("mlp.b2", Tensor::zeros(&[1, f]));
    w(&mut p, "head.w", &[f, cfg.out_dim]);
    p.insert("head.b", Tensor::zeros(&[1, cfg.out_dim]));
    Ok(p)
}

struct ProbeGraph {
    g: Graph,
    leaves: Vec<(String, NodeId)>,
    output: NodeId,
}

fn build_probe(params: &ParamSet, cfg: &ProbeConfig, tokens: &Tensor) -> Result<ProbeGraph> {
    let mut g = Graph::new();
    let mut leaves = Vec::new();
    let leaf = |g: &mut Graph, leaves: &mut Vec<(String, NodeId)>, name: &str| {
        let id = g.leaf(params.get(name).clone());
        leaves.push((name.to_string(), id));
        id
    };
    let x = g.leaf(tokens.clone());
    let in_w = leaf(&mut g, &mut leaves, "in.w");
    let in_b = leaf(&mut g, &mut leaves, "in.b");
    let xw = g.matmul(x, in_w)?;
    let feats = g.add_row(xw, in_b)?;

    let query = leaf(&mut g, &mut leaves, "query");
    let wq = leaf(&mut g, &mut leaves, "attn.wq");
    let wk = leaf(&mut g, &mut leaves, "attn.wk");
    let wv = leaf(&mut g, &mut leaves, "attn.wv");
    let q = g.matmul(query, wq)?;
    let k = g.matmul(feats, wk)?;
    let v = g.matmul(feats, wv)?;
    let hd = cfg.feature_dim / cfg.n_heads;
    let mut pooled = None;
    for h in 0..cfg.n_heads {
        let qh = g.slice_cols(q, h * hd, hd)?;
        let kh = g.slice_cols(k, h * hd, hd)?;
        let vh = g.slice_cols(v, h * hd, hd)?;
        let kt = g.transpose(kh);
        let logits = g.matmul(qh, kt)?;
        let scaled = g.scale(logits, 1.0 / (hd as f64).sqrt());
        let attn = g.softmax_rows(scaled);
        let oh = g.matmul(attn, vh)?;
        pooled = Some(match pooled {
            None => oh,
            Some(prev) => g.concat_cols(prev, oh)?,
        });
    }
    let wo = leaf(&mut g, &mut leaves, "attn.wo");
    let bo = leaf(&mut g, &mut leaves, "attn.bo");
    let po = g.matmul(pooled.unwrap(), wo)?;
    let po = g.add_row(po, bo)?;

    let ln_g = leaf(&mut g, &mut leaves, "ln.g");
    let ln_b = leaf(&mut g, &mut leaves, "ln.b");
    let normed = g.layernorm(po, ln_g, ln_b)?;
    let w1 = leaf(&mut g, &mut leaves, "mlp.w1");
    let b1 = leaf(&mut g, &mut leaves, "mlp.b1");
    let w2 = leaf(&mut g, &mut leaves, "mlp.w2");
    let b2 = leaf(&mut g, &mut leaves, "mlp.b2");
    let h1 = g.matmul(normed, w1)?;
    let h1 = g.add_row(h1, b1)?;
    let h1 = g.gelu(h1);
    let h2 = g.matmul(h1, w2)?;
    let h2 = g.add_row(h2, b2)?;

    let hw = leaf(&mut g, &mut leaves, "head.w");
    let hb = leaf(&mut g, &mut leaves, "head.b");
    let out = g.matmul(h2, hw)?;
    let output = g.add_row(out, hb)?;
    Ok(ProbeGraph { g, leaves, output })
}

/// Probe prediction for one token matrix.
pub fn probe_predict(params: &ParamSet, cfg: &ProbeConfig, tokens: &Tensor) -> Result<Tensor> {
    let pg = build_probe(params, cfg, tokens)?;
    Ok(pg.g.value(pg.output).clone())
}

fn sample_loss_and_grads(
    params: &ParamSet,
    cfg: &ProbeConfig,
    tokens: &Tensor,
    target: &[f64],
) -> Result<(f64, GradSet)> {
    let mut pg = build_probe(params, cfg, tokens)?;
    let t = pg.g.leaf(Tensor::from_rows(&[target.to_vec()]));
    let loss = pg.g.sq_diff_sum_scaled(pg.output, t, 1.0)?;
    let loss_val = pg.g.value(loss).data[0];
    let grads = pg.g.backward(loss)?;
    let mut out = GradSet::new();
    for (name, id) in &pg.leaves {
        if let Some(g) = &grads[id.0] {
            out.insert(name.clone(), g.clone());
        }
    }
    Ok((loss_val, out))
}

/// Mean squared L2 error of the probe on a sample set.
pub fn probe_mse(params: &ParamSet, cfg: &ProbeConfig, samples: &[(Tensor, Vec<f64>)]) -> Result<f64> {
    let total: f64 = samples
        .par_iter()
        .map(|(x, t)| {
            let y = probe_predict(params, cfg, x)?;
            Ok(y.data
                .iter()
                .zip(t)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum();
    Ok(total / samples.len() as f64)
}

/// Predict-the-mean baseline: MSE on `val` of the constant train-target
/// mean.
pub fn mean_baseline_mse(train: &[(Tensor, Vec<f64>)], val: &[(Tensor, Vec<f64>)]) -> f64 {
    let dim = train[0].1.len();
    let mut mean = vec![0.0; dim];
    for (_, t) in train {
        for (m, v) in mean.iter_mut().zip(t) {
            *m += v / train.len() as f64;
        }
    }
    val.iter()
        .map(|(_, t)| {
            t.iter()
                .zip(&mean)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum::<f64>()
        / val.len() as f64
}

/// Full-batch Adam training of the attentive probe. Returns the trained
/// parameters and the validation MSE after every epoch. A non-finite
/// training loss aborts.
pub fn train_probe(
    train: &[(Tensor, Vec<f64>)],
    val: &[(Tensor, Vec<f64>)],
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<(ParamSet, Vec<f64>)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::DegenerateInput("empty probe split".into()));
    }
    let token_dim = train[0].0.cols();
    let mut params = init_probe(cfg, token_dim, seed)?;
    let mut adam = AdamState::new(cfg.lr);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let scale = 1.0 / train.len() as f64;
    for epoch in 0..cfg.epochs {
        let results: Vec<Result<(f64, GradSet)>> = train
            .par_iter()
            .map(|(x, t)| sample_loss_and_grads(&params, cfg, x, t))
            .collect();
        let mut grads = GradSet::new();
        let mut train_loss = 0.0;
        for r in results {
            let (loss, g) = r?;
            train_loss += loss * scale;
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
        if !train_loss.is_finite() {
            return Err(Error::NonFinite {
                what: format!("probe training loss at epoch {epoch}"),
            });
        }
        adam_step(&mut params, &grads, &mut adam)?;
        curve.push(probe_mse(&params, cfg, val)?);
    }
    Ok((params, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_dataset, EnvConfig, Tokenizer};
    use crate::plan::DropMask;

    fn probe_cfg(lr: f64, epochs: usize) -> ProbeConfig {
        ProbeConfig {
            feature_dim: 16,
            n_heads: 4,
            hidden_mult: 2,
            out_dim: 2,
            lr,
            epochs,
        }
    }

    fn env_samples(n_eps: usize, seed: u64) -> Vec<(Tensor, Vec<f64>)> {
        let env = EnvConfig::default();
        let tok = Tokenizer::new(0, env.patch_size, 8);
        let ds = generate_dataset(&env, &tok, n_eps, 3, seed).unwrap();
        ds.episodes
            .iter()
            .flat_map(|ep| {
                ep.tokens
                    .iter()
                    .zip(&ep.states)
                    .map(|(tg, st)| (tg.tokens.clone(), vec![st.x, st.y]))
            })
            .collect()
    }

    #[test]
    fn constant_targets_are_learned() {
        let samples: Vec<(Tensor, Vec<f64>)> = env_samples(8, 0)
            .into_iter()
            .map(|(x, _)| (x, vec![0.3, -0.2]))
            .collect();
        let (train, val) = samples.split_at(24);
        let (_, curve) = train_probe(train, val, &probe_cfg(1e-2, 150), 0).unwrap();
        let last = *curve.last().unwrap();
        assert!(last < 1e-3, "constant target val MSE {last}");
        assert!(last < curve[0]);
    }

    #[test]
    fn full_tokens_beat_mean_baseline() {
        let samples = env_samples(24, 1);
        let (train, val) = samples.split_at(48);
        let baseline = mean_baseline_mse(train, val);
        let (_, curve) = train_probe(train, val, &probe_cfg(5e-3, 250), 0).unwrap();
        let last = *curve.last().unwrap();
        assert!(
            last < baseline,
            "probe MSE {last} vs mean baseline {baseline}"
        );
    }

    #[test]
    fn seeds_differ_but_both_beat_baseline() {
        let samples = env_samples(24, 2);
        let (train, val) = samples.split_at(48);
        let baseline = mean_baseline_mse(train, val);
        let (_, c1) = train_probe(train, val, &probe_cfg(5e-3, 250), 10).unwrap();
        let (_, c2) = train_probe(train, val, &probe_cfg(5e-3, 250), 11).unwrap();
        assert_ne!(c1, c2);
        assert!(*c1.last().unwrap() < baseline);
        assert!(*c2.last().unwrap() < baseline);
    }

    #[test]
    fn keep_all_mask_is_identity() {
        let samples = env_samples(4, 3);
        let n = samples[0].0.rows();
        let mask = DropMask::all(n);
        let masked: Vec<(Tensor, Vec<f64>)> = samples
            .iter()
            .map(|(x, t)| (x.select_rows(mask.kept()), t.clone()))
            .collect();
        let (train_a, val_a) = samples.split_at(8);
        let (train_b, val_b) = masked.split_at(8);
        let (_, ca) = train_probe(train_a, val_a, &probe_cfg(1e-3, 5), 4).unwrap();
        let (_, cb) = train_probe(train_b, val_b, &probe_cfg(1e-3, 5), 4).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn bad_head_split_errors() {
        let cfg = ProbeConfig {
            feature_dim: 10,
            n_heads: 4,
            ..ProbeConfig::default()
        };
        assert!(init_probe(&cfg, 8, 0).is_err());
    }
}
