use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::AttentionMask;
use crate::error::{Error, Result};

/// Two-way spatial split of token positions, fixed for a whole sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAssignment {
    ids: Vec<u8>,
}

impl GroupAssignment {
    pub fn from_ids(ids: Vec<u8>) -> Self {
        GroupAssignment { ids }
    }

    pub fn group(&self, token: usize) -> u8 {
        self.ids[token]
    }

    pub fn ids(&self) -> &[u8] {
        &self.ids
    }

    pub fn group0_size(&self) -> usize {
        self.ids.iter().filter(|&&g| g == 0).count()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Group-0 size uniform over 1..N-1, membership a uniform subset.
pub fn sample_group_assignment<R: Rng>(rng: &mut R, n_tokens: usize) -> Result<GroupAssignment> {
    if n_tokens < 2 {
        return Err(Error::DegenerateInput(format!(
            "cannot split {n_tokens} tokens into two groups"
        )));
    }
    let size0 = rng.gen_range(1..n_tokens);
    let mut idx: Vec<usize> = (0..n_tokens).collect();
    idx.shuffle(rng);
    let mut ids = vec![1u8; n_tokens];
    for &i in &idx[..size0] {
        ids[i] = 0;
    }
    Ok(GroupAssignment { ids })
}

/// Attention mask over `frames * tokens_per_frame` flattened positions:
/// temporal causality at frame granularity, optional within-group spatial
/// restriction, diagonal always allowed.
pub fn build_mask(
    frames: usize,
    tokens_per_frame: usize,
    groups: Option<&GroupAssignment>,
) -> AttentionMask {
    let n = frames * tokens_per_frame;
    AttentionMask::from_fn(n, |i, j| {
        if i == j {
            return true;
        }
        let (fi, pi) = (i / tokens_per_frame, i % tokens_per_frame);
        let (fj, pj) = (j / tokens_per_frame, j % tokens_per_frame);
        if fj > fi {
            return false;
        }
        match groups {
            Some(g) => g.group(pi) == g.group(pj),
            None => true,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_tokens_always_split_one_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let g = sample_group_assignment(&mut rng, 2).unwrap();
            assert_eq!(g.group0_size(), 1);
        }
    }

    #[test]
    fn fixed_seed_reproduces_assignment() {
        let g1 = sample_group_assignment(&mut ChaCha8Rng::seed_from_u64(42), 16).unwrap();
        let g2 = sample_group_assignment(&mut ChaCha8Rng::seed_from_u64(42), 16).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn group0_size_uniform_chi_squared() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 16usize;
        let draws = 10_000;
        let mut counts = vec![0usize; n];
        for _ in 0..draws {
            let g = sample_group_assignment(&mut rng, n).unwrap();
            counts[g.group0_size()] += 1;
        }
        // sizes 1..=15, expected uniform
        let k = n - 1;
        let expected = draws as f64 / k as f64;
        let chi2: f64 = (1..n)
            .map(|s| {
                let d = counts[s] as f64 - expected;
                d * d / expected
            })
            .sum();
        // chi-square critical value, 14 dof, p=0.01
        assert!(chi2 < 29.141, "chi2 {chi2} too large; sizes not uniform");
    }

    #[test]
    fn degenerate_token_count_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_group_assignment(&mut rng, 1).is_err());
    }

    #[test]
    fn single_frame_ungrouped_mask_is_all_allowed() {
        let m = build_mask(1, 4, None);
        for i in 0..4 {
            for j in 0..4 {
                assert!(m.allowed(i, j));
            }
        }
    }

    #[test]
    fn grouped_two_frame_mask_enumeration() {
        // N=4, groups [0,0,1,1], 2 frames: query (frame 1, pos 0) may
        // attend exactly the group-0 positions of frames 0..1.
        let g = GroupAssignment::from_ids(vec![0, 0, 1, 1]);
        let m = build_mask(2, 4, Some(&g));
        let q = 4; // frame 1, pos 0
        let allowed: Vec<usize> = (0..8).filter(|&j| m.allowed(q, j)).collect();
        assert_eq!(allowed, vec![0, 1, 4, 5]);
    }

    #[test]
    fn diagonal_always_allowed() {
        let g = GroupAssignment::from_ids(vec![0, 1, 0, 1]);
        let m = build_mask(3, 4, Some(&g));
        for i in 0..12 {
            assert!(m.allowed(i, i));
        }
    }

    #[test]
    fn causality_forbids_future_frames() {
        let m = build_mask(3, 2, None);
        assert!(!m.allowed(0, 2)); // frame 0 cannot see frame 1
        assert!(m.allowed(4, 1)); // frame 2 sees frame 0
    }
}
