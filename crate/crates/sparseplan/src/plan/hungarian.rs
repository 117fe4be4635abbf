use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Minimum-cost perfect matching on a square cost matrix via the
/// potentials formulation (O(n^3)). Returns `assign[row] = col`.
///
/// ```
/// use sparseplan::plan::{assignment_cost, hungarian_match};
/// use sparseplan::autodiff::Tensor;
///
/// let cost = Tensor::from_rows(&[
///     vec![4.0, 1.0, 3.0],
///     vec![2.0, 0.0, 5.0],
///     vec![3.0, 2.0, 2.0],
/// ]);
/// let assign = hungarian_match(&cost).unwrap();
/// assert_eq!(assignment_cost(&cost, &assign), 5.0);
/// ```
pub fn hungarian_match(cost: &Tensor) -> Result<Vec<usize>> {
    let n = cost.rows();
    if cost.cols() != n {
        return Err(Error::ShapeMismatch {
            op: "hungarian_match",
            left: cost.shape.clone(),
            right: vec![n, n],
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if !cost.data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            what: "hungarian cost matrix".into(),
        });
    }
    // 1-indexed arrays; column 0 is the virtual unmatched slot.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1]; // col -> row
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        matched_row[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[matched_row[j] - 1] = j - 1;
    }
    Ok(assign)
}

/// Total cost of an assignment.
pub fn assignment_cost(cost: &Tensor, assign: &[usize]) -> f64 {
    assign
        .iter()
        .enumerate()
        .map(|(r, &c)| cost.at(r, c))
        .sum()
}
