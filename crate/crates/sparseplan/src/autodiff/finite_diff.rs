//! Central finite-difference gradient checking, used by the test suites
//! as an oracle independent of the backward rules.

use crate::autodiff::tensor::Tensor;

pub const FD_EPS: f64 = 1e-3;
pub const FD_REL_TOL: f64 = 1e-4;

/// Central finite differences of a scalar function of several tensors.
pub fn fd_gradients(f: &dyn Fn(&[Tensor]) -> f64, inputs: &[Tensor], eps: f64) -> Vec<Tensor> {
    let mut grads = Vec::with_capacity(inputs.len());
    for (ti, t) in inputs.iter().enumerate() {
        let mut g = Tensor::zeros(&t.shape);
        for i in 0..t.data.len() {
            let mut plus = inputs.to_vec();
            plus[ti].data[i] += eps;
            let mut minus = inputs.to_vec();
            minus[ti].data[i] -= eps;
            g.data[i] = (f(&plus) - f(&minus)) / (2.0 * eps);
        }
        grads.push(g);
    }
    grads
}

/// Relative error between two gradient tensors, scaled by the larger norm.
pub fn rel_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = a.frobenius_norm().max(b.frobenius_norm()).max(1e-8);
    diff / scale
}

/// Assert analytic gradients against central finite differences.
pub fn check_gradients(
    f: &dyn Fn(&[Tensor]) -> f64,
    inputs: &[Tensor],
    analytic: &[Tensor],
    label: &str,
) {
    let numeric = fd_gradients(f, inputs, FD_EPS);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = rel_error(a, n);
        assert!(
            err <= FD_REL_TOL,
            "{label}: gradient {i} rel err {err:.3e} > {FD_REL_TOL:.0e}"
        );
    }
}
