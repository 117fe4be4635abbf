use crate::autodiff::tensor::{matmul_raw, transpose_raw, Tensor};
use crate::error::{Error, Result};

pub const LAYERNORM_EPS: f64 = 1e-5;
/// Large negative logit standing in for -inf on forbidden attention pairs.
pub const MASK_NEG: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul,
    Transpose,
    Add,
    Sub,
    Mul,
    Scale(f64),
    /// (r x c) + broadcast (1 x c)
    AddRow,
    SoftmaxRows,
    /// x, gain (1 x c), bias (1 x c)
    LayerNorm,
    Gelu,
    ConcatCols,
    ConcatRows,
    SliceRows { start: usize },
    SliceCols { start: usize },
    /// scalar sum of all entries
    Sum,
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
}

/// Operation tape. Nodes are appended in topological order; `backward`
/// walks the tape in reverse accumulating gradients.
///
/// ```
/// use sparseplan::autodiff::{Graph, Tensor};
///
/// let mut g = Graph::new();
/// let a = g.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]));
/// let b = g.leaf(Tensor::from_rows(&[vec![3.0], vec![4.0]]));
/// let c = g.matmul(a, b).unwrap();
/// assert_eq!(g.value(c).data, vec![11.0]);
///
/// let grads = g.backward(c).unwrap();
/// // d(ab)/da = bᵀ
/// assert_eq!(grads[a.0].as_ref().unwrap().data, vec![3.0, 4.0]);
/// ```
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, inputs, value });
        id
    }

    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], t)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = matmul_raw(self.value(a), self.value(b))?;
        Ok(self.push(Op::Matmul, vec![a, b], v))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = transpose_raw(self.value(a));
        self.push(Op::Transpose, vec![a], v)
    }

    fn elementwise(
        &mut self,
        op: Op,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        name: &'static str,
    ) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(Error::ShapeMismatch {
                op: name,
                left: ta.shape.clone(),
                right: tb.shape.clone(),
            });
        }
        let data = ta
            .data
            .iter()
            .zip(tb.data.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let v = Tensor {
            shape: ta.shape.clone(),
            data,
        };
        Ok(self.push(op, vec![a, b], v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(Op::Add, a, b, |x, y| x + y, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(Op::Sub, a, b, |x, y| x - y, "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(Op::Mul, a, b, |x, y| x * y, "mul")
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let ta = self.value(a);
        let v = Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().map(|&x| x * c).collect(),
        };
        self.push(Op::Scale(c), vec![a], v)
    }

    /// Add a (1 x c) row vector to every row of a.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.rows() != 1 || ta.cols() != tb.cols() {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                left: ta.shape.clone(),
                right: tb.shape.clone(),
            });
        }
        let c = ta.cols();
        let mut data = ta.data.clone();
        for r in 0..ta.rows() {
            for j in 0..c {
                data[r * c + j] += tb.data[j];
            }
        }
        let v = Tensor {
            shape: ta.shape.clone(),
            data,
        };
        Ok(self.push(Op::AddRow, vec![a, b], v))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let ta = self.value(a);
        let (r, c) = (ta.rows(), ta.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = ta.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - m).exp();
                data[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                data[i * c + j] /= sum;
            }
        }
        let v = Tensor {
            shape: vec![r, c],
            data,
        };
        self.push(Op::SoftmaxRows, vec![a], v)
    }

    pub fn layernorm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let c = tx.cols();
        if c < 2 {
            return Err(Error::DegenerateInput(format!(
                "layernorm over axis of size {c}"
            )));
        }
        if tg.rows() != 1 || tg.cols() != c || tb.rows() != 1 || tb.cols() != c {
            return Err(Error::ShapeMismatch {
                op: "layernorm",
                left: tx.shape.clone(),
                right: tg.shape.clone(),
            });
        }
        let r = tx.rows();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = tx.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYERNORM_EPS).sqrt();
            for j in 0..c {
                let xhat = (row[j] - mean) * inv;
                data[i * c + j] = tg.data[j] * xhat + tb.data[j];
            }
        }
        let v = Tensor {
            shape: vec![r, c],
            data,
        };
        Ok(self.push(Op::LayerNorm, vec![x, gain, bias], v))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let ta = self.value(a);
        let v = Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().map(|&x| gelu_tanh(x)).collect(),
        };
        self.push(Op::Gelu, vec![a], v)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                left: ta.shape.clone(),
                right: tb.shape.clone(),
            });
        }
        let (r, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(ta.row(i));
            data.extend_from_slice(tb.row(i));
        }
        let v = Tensor {
            shape: vec![r, ca + cb],
            data,
        };
        Ok(self.push(Op::ConcatCols, vec![a, b], v))
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(Error::ShapeMismatch {
                op: "concat_rows",
                left: ta.shape.clone(),
                right: tb.shape.clone(),
            });
        }
        let mut data = Vec::with_capacity(ta.data.len() + tb.data.len());
        data.extend_from_slice(&ta.data);
        data.extend_from_slice(&tb.data);
        let v = Tensor {
            shape: vec![ta.rows() + tb.rows(), ta.cols()],
            data,
        };
        Ok(self.push(Op::ConcatRows, vec![a, b], v))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let ta = self.value(a);
        if start + len > ta.rows() {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                left: ta.shape.clone(),
                right: vec![start, len],
            });
        }
        let c = ta.cols();
        let data = ta.data[start * c..(start + len) * c].to_vec();
        let v = Tensor {
            shape: vec![len, c],
            data,
        };
        Ok(self.push(Op::SliceRows { start }, vec![a], v))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let ta = self.value(a);
        if start + len > ta.cols() {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                left: ta.shape.clone(),
                right: vec![start, len],
            });
        }
        let (r, c) = (ta.rows(), ta.cols());
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&ta.data[i * c + start..i * c + start + len]);
        }
        let v = Tensor {
            shape: vec![r, len],
            data,
        };
        Ok(self.push(Op::SliceCols { start }, vec![a], v))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data.iter().sum();
        self.push(Op::Sum, vec![a], Tensor::scalar(s))
    }

    /// Mean squared error between two same-shape tensors, divided by
    /// `denom` rather than the element count.
    pub fn sq_diff_sum_scaled(&mut self, a: NodeId, b: NodeId, denom: f64) -> Result<NodeId> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        let s = self.sum(sq);
        Ok(self.scale(s, 1.0 / denom))
    }

    /// Reverse-mode pass from a scalar root. Returns one gradient slot per
    /// node; unreachable nodes hold `None`.
    pub fn backward(&self, root: NodeId) -> Result<Vec<Option<Tensor>>> {
        let rv = self.value(root);
        if rv.data.len() != 1 {
            return Err(Error::DegenerateInput(format!(
                "backward root must be scalar, got shape {:?}",
                rv.shape
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.accumulate_inputs(node, &gout, &mut grads)?;
            grads[idx] = Some(gout);
        }

        for g in grads.iter().flatten() {
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    what: "backward gradient".into(),
                });
            }
        }
        Ok(grads)
    }

    fn accumulate_inputs(
        &self,
        node: &Node,
        gout: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let mut acc = |id: NodeId, g: Tensor| {
            match &mut grads[id.0] {
                Some(existing) => {
                    for (e, v) in existing.data.iter_mut().zip(g.data.iter()) {
                        *e += v;
                    }
                }
                slot => *slot = Some(g),
            };
        };
        match &node.op {
            Op::Leaf => {}
            Op::Matmul => {
                let a = self.value(node.inputs[0]);
                let b = self.value(node.inputs[1]);
                let ga = matmul_raw(gout, &transpose_raw(b))?;
                let gb = matmul_raw(&transpose_raw(a), gout)?;
                acc(node.inputs[0], ga);
                acc(node.inputs[1], gb);
            }
            Op::Transpose => acc(node.inputs[0], transpose_raw(gout)),
            Op::Add => {
                acc(node.inputs[0], gout.clone());
                acc(node.inputs[1], gout.clone());
            }
            Op::Sub => {
                acc(node.inputs[0], gout.clone());
                let neg = Tensor {
                    shape: gout.shape.clone(),
                    data: gout.data.iter().map(|v| -v).collect(),
                };
                acc(node.inputs[1], neg);
            }
            Op::Mul => {
                let a = self.value(node.inputs[0]);
                let b = self.value(node.inputs[1]);
                let ga = Tensor {
                    shape: gout.shape.clone(),
                    data: gout
                        .data
                        .iter()
                        .zip(b.data.iter())
                        .map(|(&g, &y)| g * y)
                        .collect(),
                };
                let gb = Tensor {
                    shape: gout.shape.clone(),
                    data: gout
                        .data
                        .iter()
                        .zip(a.data.iter())
                        .map(|(&g, &x)| g * x)
                        .collect(),
                };
                acc(node.inputs[0], ga);
                acc(node.inputs[1], gb);
            }
            Op::Scale(c) => {
                let g = Tensor {
                    shape: gout.shape.clone(),
                    data: gout.data.iter().map(|v| v * c).collect(),
                };
                acc(node.inputs[0], g);
            }
            Op::AddRow => {
                acc(node.inputs[0], gout.clone());
                let (r, c) = (gout.rows(), gout.cols());
                let mut gb = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        gb[j] += gout.data[i * c + j];
                    }
                }
                acc(
                    node.inputs[1],
                    Tensor {
                        shape: vec![1, c],
                        data: gb,
                    },
                );
            }
            Op::SoftmaxRows => {
                let y = &node.value;
                let (r, c) = (y.rows(), y.cols());
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    let yr = y.row(i);
                    let gr = gout.row(i);
                    let dot: f64 = yr.iter().zip(gr.iter()).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        gx[i * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(
                    node.inputs[0],
                    Tensor {
                        shape: vec![r, c],
                        data: gx,
                    },
                );
            }
            Op::LayerNorm => {
                let x = self.value(node.inputs[0]);
                let gain = self.value(node.inputs[1]);
                let (r, c) = (x.rows(), x.cols());
                let cf = c as f64;
                let mut gx = vec![0.0; r * c];
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                for i in 0..r {
                    let row = x.row(i);
                    let mean = row.iter().sum::<f64>() / cf;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cf;
                    let inv = 1.0 / (var + LAYERNORM_EPS).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv).collect();
                    let go = gout.row(i);
                    let dxhat: Vec<f64> = (0..c).map(|j| go[j] * gain.data[j]).collect();
                    let mean_dxhat = dxhat.iter().sum::<f64>() / cf;
                    let mean_dxhat_xhat =
                        dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<f64>() / cf;
                    for j in 0..c {
                        gx[i * c + j] = inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                        gg[j] += go[j] * xhat[j];
                        gb[j] += go[j];
                    }
                }
                acc(
                    node.inputs[0],
                    Tensor {
                        shape: vec![r, c],
                        data: gx,
                    },
                );
                acc(
                    node.inputs[1],
                    Tensor {
                        shape: vec![1, c],
                        data: gg,
                    },
                );
                acc(
                    node.inputs[2],
                    Tensor {
                        shape: vec![1, c],
                        data: gb,
                    },
                );
            }
            Op::Gelu => {
                let x = self.value(node.inputs[0]);
                let g = Tensor {
                    shape: gout.shape.clone(),
                    data: gout
                        .data
                        .iter()
                        .zip(x.data.iter())
                        .map(|(&g, &v)| g * gelu_tanh_grad(v))
                        .collect(),
                };
                acc(node.inputs[0], g);
            }
            Op::ConcatCols => {
                let ca = self.value(node.inputs[0]).cols();
                let cb = self.value(node.inputs[1]).cols();
                let r = gout.rows();
                let (mut ga, mut gb) = (Vec::with_capacity(r * ca), Vec::with_capacity(r * cb));
                for i in 0..r {
                    let row = gout.row(i);
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                acc(
                    node.inputs[0],
                    Tensor {
                        shape: vec![r, ca],
                        data: ga,
                    },
                );
                acc(
                    node.inputs[1],
                    Tensor {
                        shape: vec![r, cb],
                        data: gb,
                    },
                );
            }
            Op::ConcatRows => {
                let ra = self.value(node.inputs[0]).rows();
                let c = gout.cols();
                let ga = Tensor {
                    shape: vec![ra, c],
                    data: gout.data[..ra * c].to_vec(),
                };
                let rb = gout.rows() - ra;
                let gb = Tensor {
                    shape: vec![rb, c],
                    data: gout.data[ra * c..].to_vec(),
                };
                acc(node.inputs[0], ga);
                acc(node.inputs[1], gb);
            }
            Op::SliceRows { start } => {
                let a = self.value(node.inputs[0]);
                let mut g = Tensor::zeros(&a.shape);
                let c = a.cols();
                g.data[start * c..start * c + gout.data.len()].copy_from_slice(&gout.data);
                acc(node.inputs[0], g);
            }
            Op::SliceCols { start } => {
                let a = self.value(node.inputs[0]);
                let (r, c) = (a.rows(), a.cols());
                let len = gout.cols();
                let mut g = Tensor::zeros(&a.shape);
                for i in 0..r {
                    for j in 0..len {
                        g.data[i * c + start + j] = gout.data[i * len + j];
                    }
                }
                acc(node.inputs[0], g);
            }
            Op::Sum => {
                let a = self.value(node.inputs[0]);
                let g0 = gout.data[0];
                acc(
                    node.inputs[0],
                    Tensor {
                        shape: a.shape.clone(),
                        data: vec![g0; a.data.len()],
                    },
                );
            }
        }
        Ok(())
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh-approximation GeLU.
pub fn gelu_tanh(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_tanh_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Boolean allowed/forbidden matrix over (query, key) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    pub n: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn all_allowed(n: usize) -> Self {
        AttentionMask {
            n,
            allowed: vec![true; n * n],
        }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allowed = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                allowed[i * n + j] = f(i, j);
            }
        }
        AttentionMask { n, allowed }
    }

    pub fn allowed(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.n + k]
    }

    /// Additive logit bias: 0 where allowed, MASK_NEG where forbidden.
    pub fn bias_tensor(&self) -> Tensor {
        Tensor {
            shape: vec![self.n, self.n],
            data: self
                .allowed
                .iter()
                .map(|&a| if a { 0.0 } else { MASK_NEG })
                .collect(),
        }
    }

    pub fn check_rows(&self) -> Result<()> {
        for q in 0..self.n {
            if !(0..self.n).any(|k| self.allowed(q, k)) {
                return Err(Error::AllMaskedRow { row: q });
            }
        }
        Ok(())
    }
}

/// Single-head scaled dot-product attention with an additive mask.
/// Returns (output node, attention-probability node).
pub fn masked_attention(
    g: &mut Graph,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    mask: &AttentionMask,
) -> Result<(NodeId, NodeId)> {
    let dk = g.value(q).cols();
    if g.value(k).cols() != dk || g.value(k).rows() != g.value(v).rows() {
        return Err(Error::ShapeMismatch {
            op: "masked_attention",
            left: g.value(q).shape.clone(),
            right: g.value(k).shape.clone(),
        });
    }
    if g.value(q).rows() != mask.n || g.value(k).rows() != mask.n {
        return Err(Error::ShapeMismatch {
            op: "masked_attention_mask",
            left: vec![g.value(q).rows(), g.value(k).rows()],
            right: vec![mask.n, mask.n],
        });
    }
    mask.check_rows()?;
    let kt = g.transpose(k);
    let scores = g.matmul(q, kt)?;
    let scaled = g.scale(scores, 1.0 / (dk as f64).sqrt());
    let bias = g.leaf(mask.bias_tensor());
    let biased = g.add(scaled, bias)?;
    let attn = g.softmax_rows(biased);
    let out = g.matmul(attn, v)?;
    Ok((out, attn))
}
