use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Kept token positions for a dropout fraction p: round((1-p)N) indices,
/// never fewer than one, strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct DropMask {
    kept: Vec<usize>,
    pub p: f64,
}

impl DropMask {
    pub fn new(mut kept: Vec<usize>, p: f64) -> Result<Self> {
        kept.sort_unstable();
        kept.dedup();
        if kept.is_empty() {
            return Err(Error::DegenerateInput("drop mask keeps zero tokens".into()));
        }
        Ok(DropMask { kept, p })
    }

    pub fn all(n: usize) -> Self {
        DropMask {
            kept: (0..n).collect(),
            p: 0.0,
        }
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }
}

/// Number of tokens kept at fraction p: nearest-integer rounding with a
/// floor of one.
pub fn keep_count(n: usize, p: f64) -> usize {
    (((1.0 - p) * n as f64).round() as usize).clamp(1, n)
}

/// Uniform random subset of size round((1-p)N).
pub fn sample_mask_random<R: Rng>(rng: &mut R, n: usize, p: f64) -> Result<DropMask> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("drop fraction {p} outside [0,1)")));
    }
    let k = keep_count(n, p);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.truncate(k);
    DropMask::new(idx, p)
}

/// Latin-hypercube style spatially stratified mask over an Hp x Wp grid:
/// the keep count k defines k row strata and k column strata; each
/// selected token occupies a distinct stratum of each kind.
pub fn sample_mask_lhs<R: Rng>(
    rng: &mut R,
    grid: (usize, usize),
    p: f64,
) -> Result<DropMask> {
    let (hp, wp) = grid;
    let n = hp * wp;
    let k = keep_count(n, p);
    if k > n {
        return Err(Error::Config(format!("keep count {k} exceeds {n} tokens")));
    }
    // Strata may be finer than the grid; rejection-resample token
    // collisions (disjoint strata cells make termination quick).
    for _ in 0..10_000 {
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(rng);
        let mut tokens: Vec<usize> = (0..k)
            .map(|j| {
                let row = ((j as f64 + rng.gen::<f64>()) * hp as f64 / k as f64) as usize;
                let col = ((perm[j] as f64 + rng.gen::<f64>()) * wp as f64 / k as f64) as usize;
                row.min(hp - 1) * wp + col.min(wp - 1)
            })
            .collect();
        tokens.sort_unstable();
        tokens.dedup();
        if tokens.len() == k {
            return DropMask::new(tokens, p);
        }
    }
    Err(Error::Planning(format!(
        "could not draw {k} distinct stratified tokens on a {hp}x{wp} grid"
    )))
}
