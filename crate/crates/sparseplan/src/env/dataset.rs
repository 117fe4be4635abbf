use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::env::render::{render, Frame};
use crate::env::sim::{step, EnvConfig, EnvState};
use crate::env::tokenizer::Tokenizer;
use crate::error::{Error, Result};
use crate::token::TokenGrid;

/// One trajectory: frames, the actions between them, and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub frames: Vec<Frame>,
    pub tokens: Vec<TokenGrid>,
    pub actions: Vec<[f64; 2]>,
    pub states: Vec<EnvState>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub env: EnvConfig,
    pub tokenizer_seed: u64,
    pub token_dim: usize,
    pub episodes: Vec<Episode>,
}

impl Dataset {
    pub fn tokenizer(&self) -> Tokenizer {
        Tokenizer::new(self.tokenizer_seed, self.env.patch_size, self.token_dim)
    }
}

/// Random-action episodes from uniform start states on both sides of the
/// wall. Episode RNG streams derive from the master seed by index, so
/// generation parallelizes without changing results.
pub fn generate_dataset(
    env: &EnvConfig,
    tokenizer: &Tokenizer,
    n_episodes: usize,
    ep_len: usize,
    seed: u64,
) -> Result<Dataset> {
    env.validate()?;
    let episodes: Vec<Result<Episode>> = (0..n_episodes)
        .into_par_iter()
        .map(|idx| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(idx as u64 + 1);
            generate_episode(env, tokenizer, ep_len, &mut rng, seed)
        })
        .collect();
    let episodes = episodes.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        env: env.clone(),
        tokenizer_seed: tokenizer.seed,
        token_dim: tokenizer.token_dim,
        episodes,
    })
}

fn generate_episode(
    env: &EnvConfig,
    tokenizer: &Tokenizer,
    ep_len: usize,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> Result<Episode> {
    let mut state = EnvState::new(rng.gen::<f64>(), rng.gen::<f64>());
    let mut states = vec![state];
    let mut actions = Vec::with_capacity(ep_len);
    for _ in 0..ep_len {
        let a = [
            rng.gen_range(-env.a_max..=env.a_max),
            rng.gen_range(-env.a_max..=env.a_max),
        ];
        state = step(env, &state, a);
        actions.push(a);
        states.push(state);
    }
    let frames: Vec<Frame> = states.iter().map(|s| render(env, s)).collect();
    let tokens = frames
        .iter()
        .enumerate()
        .map(|(i, f)| tokenizer.tokenize(f, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Episode {
        frames,
        tokens,
        actions,
        states,
        seed,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    env: EnvConfig,
    tokenizer_seed: u64,
    token_dim: usize,
    episodes: Vec<EpisodeEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EpisodeEntry {
    index: usize,
    seed: u64,
    n_frames: usize,
}

/// Container layout: 4-byte little-endian manifest length, JSON manifest,
/// then per-episode blocks of f64 little-endian arrays in manifest order
/// (frames, tokens, actions, states).
pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let manifest = Manifest {
        env: ds.env.clone(),
        tokenizer_seed: ds.tokenizer_seed,
        token_dim: ds.token_dim,
        episodes: ds
            .episodes
            .iter()
            .enumerate()
            .map(|(index, ep)| EpisodeEntry {
                index,
                seed: ep.seed,
                n_frames: ep.frames.len(),
            })
            .collect(),
    };
    let mbytes = serde_json::to_vec(&manifest)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(mbytes.len() as u32).to_le_bytes())?;
    w.write_all(&mbytes)?;
    let write_f64s = |w: &mut BufWriter<File>, vals: &[f64]| -> Result<()> {
        for v in vals {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    };
    for ep in &ds.episodes {
        for f in &ep.frames {
            write_f64s(&mut w, &f.pixels)?;
        }
        for t in &ep.tokens {
            write_f64s(&mut w, &t.tokens.data)?;
        }
        for a in &ep.actions {
            write_f64s(&mut w, a)?;
        }
        for s in &ep.states {
            write_f64s(&mut w, &[s.x, s.y])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut len4 = [0u8; 4];
    r.read_exact(&mut len4)?;
    let mlen = u32::from_le_bytes(len4) as usize;
    let mut mbytes = vec![0u8; mlen];
    r.read_exact(&mut mbytes)?;
    let manifest: Manifest = serde_json::from_slice(&mbytes)?;
    manifest.env.validate()?;
    let g = manifest.env.frame_size;
    let n_tokens = manifest.env.n_tokens();
    let d = manifest.token_dim;
    let read_f64s = |r: &mut BufReader<File>, n: usize| -> Result<Vec<f64>> {
        let mut out = vec![0.0f64; n];
        let mut buf = [0u8; 8];
        for v in out.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        Ok(out)
    };
    let mut episodes = Vec::with_capacity(manifest.episodes.len());
    for entry in &manifest.episodes {
        let nf = entry.n_frames;
        if nf == 0 {
            return Err(Error::Config("episode with zero frames".into()));
        }
        let mut frames = Vec::with_capacity(nf);
        for _ in 0..nf {
            frames.push(Frame {
                size: g,
                pixels: read_f64s(&mut r, g * g)?,
            });
        }
        let mut tokens = Vec::with_capacity(nf);
        for i in 0..nf {
            tokens.push(TokenGrid::new(
                Tensor::new(vec![n_tokens, d], read_f64s(&mut r, n_tokens * d)?)?,
                i,
            ));
        }
        let mut actions = Vec::with_capacity(nf - 1);
        for _ in 0..nf - 1 {
            let a = read_f64s(&mut r, 2)?;
            actions.push([a[0], a[1]]);
        }
        let mut states = Vec::with_capacity(nf);
        for _ in 0..nf {
            let s = read_f64s(&mut r, 2)?;
            states.push(EnvState { x: s[0], y: s[1] });
        }
        episodes.push(Episode {
            frames,
            tokens,
            actions,
            states,
            seed: entry.seed,
        });
    }
    Ok(Dataset {
        env: manifest.env,
        tokenizer_seed: manifest.tokenizer_seed,
        token_dim: manifest.token_dim,
        episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn episode_length_contract() {
        let env = EnvConfig::default();
        let tok = Tokenizer::new(0, env.patch_size, 16);
        let ds = generate_dataset(&env, &tok, 1, 5, 0).unwrap();
        let ep = &ds.episodes[0];
        assert_eq!(ep.frames.len(), 6);
        assert_eq!(ep.actions.len(), 5);
        assert_eq!(ep.states.len(), 6);
    }

    #[test]
    fn identical_seeds_give_byte_identical_files() {
        let env = EnvConfig::default();
        let tok = Tokenizer::new(7, env.patch_size, 16);
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.ds"), dir.path().join("b.ds"));
        save_dataset(&p1, &generate_dataset(&env, &tok, 3, 4, 99).unwrap()).unwrap();
        save_dataset(&p2, &generate_dataset(&env, &tok, 3, 4, 99).unwrap()).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn round_trip_preserves_episodes() {
        let env = EnvConfig::default();
        let tok = Tokenizer::new(1, env.patch_size, 16);
        let ds = generate_dataset(&env, &tok, 2, 3, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        save_dataset(&path, &ds).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.episodes, ds.episodes);
        assert_eq!(loaded.env, ds.env);
    }

    #[test]
    fn random_walks_occasionally_cross_the_wall() {
        let env = EnvConfig::default();
        let tok = Tokenizer::new(0, env.patch_size, 4);
        let ds = generate_dataset(&env, &tok, 500, 50, 123).unwrap();
        let crossings = ds
            .episodes
            .iter()
            .filter(|ep| {
                ep.states
                    .windows(2)
                    .any(|w| (w[0].x - env.wall_x).signum() != (w[1].x - env.wall_x).signum())
            })
            .count();
        assert!(crossings > 0, "no episode ever crossed the wall line");
    }
}
