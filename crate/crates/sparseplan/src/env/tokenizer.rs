use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{matmul_raw, Tensor};
use crate::env::render::Frame;
use crate::error::{Error, Result};
use crate::token::TokenGrid;

/// Frozen random linear patch tokenizer standing in for a pretrained
/// image encoder: one projection matrix drawn at construction, never
/// trained, reproducible from its seed.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    pub seed: u64,
    pub patch_size: usize,
    pub token_dim: usize,
    projection: Tensor,
}

impl Tokenizer {
    pub fn new(seed: u64, patch_size: usize, token_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p2 = patch_size * patch_size;
        let projection = Tensor::randn(&mut rng, &[p2, token_dim], 1.0 / (p2 as f64).sqrt());
        Tokenizer {
            seed,
            patch_size,
            token_dim,
            projection,
        }
    }

    /// Split the frame into non-overlapping patches (row-major over the
    /// patch grid), flatten each, and project to D features.
    pub fn tokenize(&self, frame: &Frame, frame_index: usize) -> Result<TokenGrid> {
        let g = frame.size;
        let p = self.patch_size;
        if g % p != 0 {
            return Err(Error::Config(format!(
                "frame side {g} not divisible by patch size {p}"
            )));
        }
        let side = g / p;
        let mut patches = Vec::with_capacity(side * side * p * p);
        for pr in 0..side {
            for pc in 0..side {
                for r in 0..p {
                    for c in 0..p {
                        patches.push(frame.at(pr * p + r, pc * p + c));
                    }
                }
            }
        }
        let patch_mat = Tensor::new(vec![side * side, p * p], patches)?;
        let tokens = matmul_raw(&patch_mat, &self.projection)?;
        Ok(TokenGrid::new(tokens, frame_index))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::render::Frame;

    fn blank(g: usize) -> Frame {
        Frame {
            size: g,
            pixels: vec![0.0; g * g],
        }
    }

    #[test]
    fn token_count_is_grid_squared() {
        let tok = Tokenizer::new(0, 4, 16);
        let tg = tok.tokenize(&blank(16), 0).unwrap();
        assert_eq!(tg.n_tokens(), 16);
        assert_eq!(tg.token_dim(), 16);
    }

    #[test]
    fn zero_frame_gives_zero_tokens() {
        let tok = Tokenizer::new(0, 4, 8);
        let tg = tok.tokenize(&blank(16), 0).unwrap();
        assert!(tg.tokens.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_patch_change_is_local() {
        let tok = Tokenizer::new(1, 4, 8);
        let a = blank(16);
        let mut b = blank(16);
        // patch (row 2, col 3) of the 4x4 patch grid
        b.pixels[(2 * 4) * 16 + 3 * 4] = 1.0;
        let ta = tok.tokenize(&a, 0).unwrap();
        let tb = tok.tokenize(&b, 0).unwrap();
        for i in 0..16 {
            let same = ta.tokens.row(i) == tb.tokens.row(i);
            assert_eq!(same, i != 2 * 4 + 3, "token {i}");
        }
    }

    #[test]
    fn indivisible_patch_size_errors() {
        let tok = Tokenizer::new(0, 5, 8);
        assert!(tok.tokenize(&blank(16), 0).is_err());
    }

    #[test]
    fn tokenize_is_linear() {
        let tok = Tokenizer::new(3, 4, 8);
        let mut f1 = blank(16);
        let mut f2 = blank(16);
        for i in 0..256 {
            f1.pixels[i] = (i as f64 * 0.37).sin().abs();
            f2.pixels[i] = (i as f64 * 0.11).cos().abs();
        }
        let (alpha, beta) = (0.3, 1.7);
        let mixed = Frame {
            size: 16,
            pixels: f1
                .pixels
                .iter()
                .zip(&f2.pixels)
                .map(|(&a, &b)| alpha * a + beta * b)
                .collect(),
        };
        let tm = tok.tokenize(&mixed, 0).unwrap();
        let t1 = tok.tokenize(&f1, 0).unwrap();
        let t2 = tok.tokenize(&f2, 0).unwrap();
        for i in 0..tm.tokens.data.len() {
            let expect = alpha * t1.tokens.data[i] + beta * t2.tokens.data[i];
            assert!((tm.tokens.data[i] - expect).abs() < 1e-10);
        }
    }
}
