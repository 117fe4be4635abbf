use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Kernel choice for one side of an HSIC estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    Linear,
    /// RBF with an explicit bandwidth
    Rbf(f64),
    /// RBF with bandwidth = median pairwise distance (1.0 if the median
    /// is zero)
    RbfMedian,
}

fn sq_dist(x: &Tensor, i: usize, j: usize) -> f64 {
    x.row(i)
        .iter()
        .zip(x.row(j))
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Median of all pairwise Euclidean distances, independent of sample
/// order.
pub fn median_bandwidth(x: &Tensor) -> f64 {
    let n = x.rows();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push(sq_dist(x, i, j).sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = dists.len();
    let med = if m == 0 {
        0.0
    } else if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

fn gram(x: &Tensor, spec: KernelSpec) -> Result<Tensor> {
    let n = x.rows();
    let mut k = Tensor::zeros(&[n, n]);
    match spec {
        KernelSpec::Linear => {
            for i in 0..n {
                for j in i..n {
                    let v: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| a * b).sum();
                    k.set(i, j, v);
                    k.set(j, i, v);
                }
            }
        }
        KernelSpec::Rbf(_) | KernelSpec::RbfMedian => {
            let bw = match spec {
                KernelSpec::Rbf(b) => b,
                _ => median_bandwidth(x),
            };
            if bw <= 0.0 {
                return Err(Error::Config(format!("rbf bandwidth {bw} must be > 0")));
            }
            let denom = 2.0 * bw * bw;
            for i in 0..n {
                for j in i..n {
                    let v = (-sq_dist(x, i, j) / denom).exp();
                    k.set(i, j, v);
                    k.set(j, i, v);
                }
            }
        }
    }
    Ok(k)
}

/// Doubly center a gram matrix: K̃ = HKH with H = I - 11ᵀ/n.
fn center(k: &Tensor) -> Tensor {
    let n = k.rows();
    let mut row_mean = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..n {
        let s: f64 = k.row(i).iter().sum();
        row_mean[i] = s / n as f64;
        total += s;
    }
    let grand = total / (n * n) as f64;
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, k.at(i, j) - row_mean[i] - row_mean[j] + grand);
        }
    }
    out
}

/// Empirical HSIC(X, Y) = tr(K̃L̃) / (n-1)², floored at 0.
pub fn hsic(x: &Tensor, y: &Tensor, kx: KernelSpec, ky: KernelSpec) -> Result<f64> {
    let n = x.rows();
    if y.rows() != n {
        return Err(Error::ShapeMismatch {
            op: "hsic",
            left: x.shape.clone(),
            right: y.shape.clone(),
        });
    }
    if n < 4 {
        return Err(Error::DegenerateInput(format!(
            "hsic needs at least 4 samples, got {n}"
        )));
    }
    let kc = center(&gram(x, kx)?);
    let lc = center(&gram(y, ky)?);
    // tr(K̃ L̃) = Σij K̃ij L̃ji; both are symmetric
    let mut tr = 0.0;
    for i in 0..n {
        for j in 0..n {
            tr += kc.at(i, j) * lc.at(j, i);
        }
    }
    let v = tr / ((n - 1) * (n - 1)) as f64;
    if !v.is_finite() {
        return Err(Error::NonFinite {
            what: "hsic estimate".into(),
        });
    }
    Ok(v.max(0.0))
}

/// Normalized HSIC in [0,1]; a zero denominator (constant input) gives 0.
///
/// ```
/// use sparseplan::analysis::{nhsic, KernelSpec};
/// use sparseplan::autodiff::Tensor;
/// use rand::SeedableRng;
///
/// let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
/// let x = Tensor::randn(&mut rng, &[32, 4], 1.0);
/// let v = nhsic(&x, &x, KernelSpec::Linear, KernelSpec::Linear).unwrap();
/// assert!((v - 1.0).abs() < 1e-9);   // self-dependence normalizes to 1
/// ```
pub fn nhsic(x: &Tensor, y: &Tensor, kx: KernelSpec, ky: KernelSpec) -> Result<f64> {
    let hxy = hsic(x, y, kx, ky)?;
    let hxx = hsic(x, x, kx, kx)?;
    let hyy = hsic(y, y, ky, ky)?;
    let denom = (hxx * hyy).sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((hxy / denom).clamp(0.0, 1.0))
}
