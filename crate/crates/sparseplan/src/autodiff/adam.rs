use std::collections::BTreeMap;

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors with deterministic iteration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    map: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Gradients keyed by parameter name.
pub type GradSet = BTreeMap<String, Tensor>;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

/// One Adam update with bias correction over every named gradient.
///
/// ```
/// use sparseplan::autodiff::{adam_step, AdamState, GradSet, ParamSet, Tensor};
///
/// let mut params = ParamSet::new();
/// params.insert("w", Tensor::from_rows(&[vec![1.0, -2.0]]));
/// let mut grads = GradSet::new();
/// grads.insert("w".into(), Tensor::from_rows(&[vec![0.5, 0.5]]));
/// let mut adam = AdamState::new(1e-3);
/// adam_step(&mut params, &grads, &mut adam).unwrap();
/// // first step moves each coordinate by -lr * sign(g), up to Adam's eps
/// assert!((params.get("w").data[0] - (1.0 - 1e-3)).abs() < 1e-9);
/// ```
pub fn adam_step(params: &mut ParamSet, grads: &GradSet, st: &mut AdamState) -> Result<()> {
    for (name, g) in grads {
        if !g.is_finite() {
            return Err(Error::NonFinite {
                what: format!("gradient of {name}"),
            });
        }
    }
    st.step += 1;
    let t = st.step as f64;
    let bc1 = 1.0 - st.beta1.powf(t);
    let bc2 = 1.0 - st.beta2.powf(t);
    for (name, g) in grads {
        let p = params.get_mut(name);
        if p.shape != g.shape {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: p.shape.clone(),
                right: g.shape.clone(),
            });
        }
        let m = st
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(&g.shape));
        let v = st
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(&g.shape));
        for i in 0..g.data.len() {
            m.data[i] = st.beta1 * m.data[i] + (1.0 - st.beta1) * g.data[i];
            v.data[i] = st.beta2 * v.data[i] + (1.0 - st.beta2) * g.data[i] * g.data[i];
            let mhat = m.data[i] / bc1;
            let vhat = v.data[i] / bc2;
            p.data[i] -= st.lr * mhat / (vhat.sqrt() + st.eps);
        }
    }
    Ok(())
}
