use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{masked_attention, AttentionMask, Graph, NodeId, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::token::TokenGrid;

const INIT_STD: f64 = 0.02;

/// Fresh Gaussian-initialized parameters for the given architecture.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    let e = cfg.embed_dim;
    let in_dim = cfg.token_dim + cfg.action_proj_dim;
    let mut w = |p: &mut ParamSet, name: &str, shape: &[usize]| {
        p.insert(name, Tensor::randn(&mut rng, shape, INIT_STD));
    };
    w(&mut p, "action_proj.w", &[cfg.action_dim, cfg.action_proj_dim]);
    p.insert("action_proj.b", Tensor::zeros(&[1, cfg.action_proj_dim]));
    w(&mut p, "embed.w", &[in_dim, e]);
    p.insert("embed.b", Tensor::zeros(&[1, e]));
    w(&mut p, "pos", &[cfg.n_tokens(), e]);
    for l in 0..cfg.n_layers {
        let pre = format!("layers.{l}");
        p.insert(format!("{pre}.ln1.g"), ones(e));
        p.insert(format!("{pre}.ln1.b"), Tensor::zeros(&[1, e]));
        for nm in ["wq", "wk", "wv", "wo"] {
            w(&mut p, &format!("{pre}.attn.{nm}"), &[e, e]);
        }
        for nm in ["bq", "bk", "bv", "bo"] {
            p.insert(format!("{pre}.attn.{nm}"), Tensor::zeros(&[1, e]));
        }
        p.insert(format!("{pre}.ln2.g"), ones(e));
        p.insert(format!("{pre}.ln2.b"), Tensor::zeros(&[1, e]));
        w(&mut p, &format!("{pre}.mlp.w1"), &[e, 4 * e]);
        p.insert(format!("{pre}.mlp.b1"), Tensor::zeros(&[1, 4 * e]));
        w(&mut p, &format!("{pre}.mlp.w2"), &[4 * e, e]);
        p.insert(format!("{pre}.mlp.b2"), Tensor::zeros(&[1, e]));
    }
    p.insert("final_ln.g", ones(e));
    p.insert("final_ln.b", Tensor::zeros(&[1, e]));
    w(&mut p, "head.w", &[e, cfg.token_dim]);
    p.insert("head.b", Tensor::zeros(&[1, cfg.token_dim]));
    Ok(p)
}

fn ones(n: usize) -> Tensor {
    Tensor::new(vec![1, n], vec![1.0; n]).unwrap()
}

/// A forward graph still holding the tape, for loss construction and
/// gradient collection during training.
pub(crate) struct ForwardGraph {
    pub g: Graph,
    /// (param name, leaf id) for every parameter touched
    pub param_leaves: Vec<(String, NodeId)>,
    /// leaf ids of the per-frame token inputs, oldest first
    #[allow(dead_code)]
    pub frame_leaves: Vec<NodeId>,
    /// k x D prediction for the frame after the newest input frame
    pub prediction: NodeId,
    /// full (frames * k) x D head output, one row block per input frame
    #[allow(dead_code)]
    pub all_outputs: NodeId,
    /// softmax nodes per (layer, head)
    pub attention: Vec<NodeId>,
}

struct Builder<'a> {
    g: Graph,
    params: &'a ParamSet,
    leaves: Vec<(String, NodeId)>,
}

impl<'a> Builder<'a> {
    fn p(&mut self, name: &str) -> NodeId {
        let t = self.params.get(name).clone();
        let id = self.g.leaf(t);
        self.leaves.push((name.to_string(), id));
        id
    }

    fn linear(&mut self, x: NodeId, w: &str, b: &str) -> Result<NodeId> {
        let wn = self.p(w);
        let bn = self.p(b);
        let y = self.g.matmul(x, wn)?;
        self.g.add_row(y, bn)
    }
}

/// Build the transformer forward pass over `frames` restricted token
/// matrices (each k x D, oldest first) located at grid `positions`.
/// `dropout_rng` enables residual-stream dropout at cfg.dropout_prob.
pub(crate) fn build_forward(
    params: &ParamSet,
    cfg: &ModelConfig,
    frames: &[&Tensor],
    actions: &[Vec<f64>],
    positions: &[usize],
    mask: &AttentionMask,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardGraph> {
    if frames.is_empty() {
        return Err(Error::DegenerateInput("empty history".into()));
    }
    if frames.len() > cfg.history_len + 1 {
        return Err(Error::DegenerateInput(format!(
            "history of {} frames exceeds h+1 = {}",
            frames.len(),
            cfg.history_len + 1
        )));
    }
    if actions.len() != frames.len() {
        return Err(Error::DegenerateInput(format!(
            "{} actions for {} frames",
            actions.len(),
            frames.len()
        )));
    }
    let k = positions.len();
    if k == 0 {
        return Err(Error::DegenerateInput("keep mask selects zero tokens".into()));
    }
    if let Some(&bad) = positions.iter().find(|&&p| p >= cfg.n_tokens()) {
        return Err(Error::Config(format!(
            "token position {bad} out of range for N={}",
            cfg.n_tokens()
        )));
    }
    let t_frames = frames.len();
    if mask.n != t_frames * k {
        return Err(Error::ShapeMismatch {
            op: "forward_mask",
            left: vec![mask.n],
            right: vec![t_frames * k],
        });
    }
    for f in frames {
        if f.rows() != k || f.cols() != cfg.token_dim {
            return Err(Error::ShapeMismatch {
                op: "forward_frame",
                left: f.shape.clone(),
                right: vec![k, cfg.token_dim],
            });
        }
    }

    let mut b = Builder {
        g: Graph::new(),
        params,
        leaves: Vec::new(),
    };

    // Per-frame input: tokens with the projected action broadcast along
    // the feature axis.
    let mut frame_leaves = Vec::with_capacity(t_frames);
    let mut stacked: Option<NodeId> = None;
    for (f, act) in frames.iter().zip(actions) {
        let tok = b.g.leaf((*f).clone());
        frame_leaves.push(tok);
        let a = b
            .g
            .leaf(Tensor::new(vec![1, cfg.action_dim], act.clone())?);
        let aproj = {
            let w = b.p("action_proj.w");
            let bias = b.p("action_proj.b");
            let y = b.g.matmul(a, w)?;
            b.g.add(y, bias)?
        };
        let ones_col = b.g.leaf(Tensor::new(vec![k, 1], vec![1.0; k])?);
        let tiled = b.g.matmul(ones_col, aproj)?;
        let fin = b.g.concat_cols(tok, tiled)?;
        stacked = Some(match stacked {
            None => fin,
            Some(s) => b.g.concat_rows(s, fin)?,
        });
    }
    let x_in = stacked.unwrap();

    let emb = b.linear(x_in, "embed.w", "embed.b")?;
    // Kept positions keep their own positional embedding; the gather is a
    // constant 0/1 matrix so gradients scatter back onto `pos`.
    let mut sel = Tensor::zeros(&[t_frames * k, cfg.n_tokens()]);
    for r in 0..t_frames * k {
        sel.set(r, positions[r % k], 1.0);
    }
    let sel = b.g.leaf(sel);
    let pos = b.p("pos");
    let pos_term = b.g.matmul(sel, pos)?;
    let mut x = b.g.add(emb, pos_term)?;

    let hd = cfg.head_dim();
    let mut attention = Vec::new();
    for l in 0..cfg.n_layers {
        let pre = format!("layers.{l}");
        let ln1 = {
            let g1 = b.p(&format!("{pre}.ln1.g"));
            let b1 = b.p(&format!("{pre}.ln1.b"));
            b.g.layernorm(x, g1, b1)?
        };
        let qf = b.linear(ln1, &format!("{pre}.attn.wq"), &format!("{pre}.attn.bq"))?;
        let kf = b.linear(ln1, &format!("{pre}.attn.wk"), &format!("{pre}.attn.bk"))?;
        let vf = b.linear(ln1, &format!("{pre}.attn.wv"), &format!("{pre}.attn.bv"))?;
        let mut heads: Option<NodeId> = None;
        for h in 0..cfg.n_heads {
            let qh = b.g.slice_cols(qf, h * hd, hd)?;
            let kh = b.g.slice_cols(kf, h * hd, hd)?;
            let vh = b.g.slice_cols(vf, h * hd, hd)?;
            let (oh, ah) = masked_attention(&mut b.g, qh, kh, vh, mask)?;
            attention.push(ah);
            heads = Some(match heads {
                None => oh,
                Some(acc) => b.g.concat_cols(acc, oh)?,
            });
        }
        let cat = heads.unwrap();
        let mut proj = b.linear(cat, &format!("{pre}.attn.wo"), &format!("{pre}.attn.bo"))?;
        proj = apply_dropout(&mut b.g, proj, cfg.dropout_prob, dropout_rng.as_deref_mut())?;
        x = b.g.add(x, proj)?;

        let ln2 = {
            let g2 = b.p(&format!("{pre}.ln2.g"));
            let b2 = b.p(&format!("{pre}.ln2.b"));
            b.g.layernorm(x, g2, b2)?
        };
        let h1 = b.linear(ln2, &format!("{pre}.mlp.w1"), &format!("{pre}.mlp.b1"))?;
        let act = b.g.gelu(h1);
        let mut h2 = b.linear(act, &format!("{pre}.mlp.w2"), &format!("{pre}.mlp.b2"))?;
        h2 = apply_dropout(&mut b.g, h2, cfg.dropout_prob, dropout_rng.as_deref_mut())?;
        x = b.g.add(x, h2)?;
    }

    let lnf = {
        let gf = b.p("final_ln.g");
        let bf = b.p("final_ln.b");
        b.g.layernorm(x, gf, bf)?
    };
    let out = b.linear(lnf, "head.w", "head.b")?;
    let prediction = b.g.slice_rows(out, (t_frames - 1) * k, k)?;

    Ok(ForwardGraph {
        g: b.g,
        param_leaves: b.leaves,
        frame_leaves,
        prediction,
        all_outputs: out,
        attention,
    })
}

fn apply_dropout(
    g: &mut Graph,
    x: NodeId,
    prob: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<NodeId> {
    let Some(rng) = rng else { return Ok(x) };
    if prob <= 0.0 {
        return Ok(x);
    }
    let shape = g.value(x).shape.clone();
    let n: usize = shape.iter().product();
    let scale = 1.0 / (1.0 - prob);
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.gen::<f64>() < prob { 0.0 } else { scale })
        .collect();
    let m = g.leaf(Tensor::new(shape, mask)?);
    g.mul(x, m)
}

/// One-step prediction at the input token positions. With `keep` given
/// only those positions are embedded, attended, and predicted.
///
/// ```
/// use sparseplan::model::{build_mask, forward, init_params, ModelConfig};
/// use sparseplan::autodiff::Tensor;
/// use sparseplan::token::TokenGrid;
///
/// let cfg = ModelConfig::default();            // 4x4 tokens, D = 16
/// let params = init_params(&cfg, 0).unwrap();
/// let frame = TokenGrid::new(Tensor::zeros(&[16, 16]), 0);
///
/// // keep only positions 2 and 9: two rows in, two rows out
/// let keep = [2usize, 9];
/// let mask = build_mask(1, keep.len(), None);
/// let pred = forward(&params, &cfg, &[frame], &[vec![0.0, 0.0]],
///                    &mask, Some(&keep)).unwrap();
/// assert_eq!(pred.rows(), 2);
/// ```
pub fn forward(
    params: &ParamSet,
    cfg: &ModelConfig,
    history: &[TokenGrid],
    actions: &[Vec<f64>],
    mask: &AttentionMask,
    keep: Option<&[usize]>,
) -> Result<Tensor> {
    let (frames, positions) = restrict(cfg, history, keep)?;
    let refs: Vec<&Tensor> = frames.iter().collect();
    let fg = build_forward(params, cfg, &refs, actions, &positions, mask, None)?;
    Ok(fg.g.value(fg.prediction).clone())
}

/// Forward pass that also returns per-(layer, head) attention maps.
pub fn forward_with_attention(
    params: &ParamSet,
    cfg: &ModelConfig,
    history: &[TokenGrid],
    actions: &[Vec<f64>],
    mask: &AttentionMask,
) -> Result<(Tensor, Vec<Tensor>)> {
    let (frames, positions) = restrict(cfg, history, None)?;
    let refs: Vec<&Tensor> = frames.iter().collect();
    let fg = build_forward(params, cfg, &refs, actions, &positions, mask, None)?;
    let attn = fg
        .attention
        .iter()
        .map(|&id| fg.g.value(id).clone())
        .collect();
    Ok((fg.g.value(fg.prediction).clone(), attn))
}

fn restrict(
    cfg: &ModelConfig,
    history: &[TokenGrid],
    keep: Option<&[usize]>,
) -> Result<(Vec<Tensor>, Vec<usize>)> {
    if history.is_empty() {
        return Err(Error::DegenerateInput("empty history".into()));
    }
    let positions: Vec<usize> = match keep {
        Some(idx) => {
            if idx.is_empty() {
                return Err(Error::DegenerateInput(
                    "keep mask selects zero tokens".into(),
                ));
            }
            idx.to_vec()
        }
        None => (0..cfg.n_tokens()).collect(),
    };
    let frames = history
        .iter()
        .map(|h| h.tokens.select_rows(&positions))
        .collect();
    Ok((frames, positions))
}
