use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::ParamSet;
use crate::env::{step, EnvConfig, EnvState, Tokenizer};
use crate::error::Result;
use crate::model::{ModelConfig, PredictionCorruption};
use crate::plan::{mpc_run, PlanConfig, Strategy};

/// Success rate of full-token MPC under prediction corruption at one
/// (σ, drop) grid cell.
#[derive(Debug, Clone)]
pub struct NoiseCell {
    pub sigma: f64,
    pub drop: f64,
    pub success_rate: f64,
    pub episodes: usize,
}

/// Draw a start/goal pair. With `same_side` the goal shares the start's
/// side of the wall, isolating corruption effects from door traversal.
/// The pair is resampled until it is not trivially solved.
pub fn sample_task(rng: &mut ChaCha8Rng, env: &EnvConfig, same_side: bool) -> (EnvState, EnvState) {
    loop {
        let start = EnvState::new(rng.gen(), rng.gen());
        let goal = EnvState::new(rng.gen(), rng.gen());
        if same_side && (start.x < env.wall_x) != (goal.x < env.wall_x) {
            continue;
        }
        if start.dist(&goal) > 1.5 * env.success_dist {
            return (start, goal);
        }
    }
}

/// Planning success rate over independent episodes. Episode tasks and
/// seeds derive from (seed, episode index) only, so different corruption
/// settings face identical task sets.
#[allow(clippy::too_many_arguments)]
pub fn success_rate(
    params: &ParamSet,
    cfg: &ModelConfig,
    env: &EnvConfig,
    tokenizer: &Tokenizer,
    plan_cfg: &PlanConfig,
    episodes: usize,
    seed: u64,
    corruption: Option<PredictionCorruption>,
) -> Result<(f64, Vec<bool>)> {
    let results: Vec<Result<bool>> = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(e as u64 + 1);
            let (start, goal) = sample_task(&mut rng, env, true);
            let mpc_seed = rng.gen::<u64>();
            let out = mpc_run(
                params,
                cfg,
                env,
                tokenizer,
                start,
                goal,
                plan_cfg,
                Strategy::Full,
                mpc_seed,
                true,
                corruption,
            )?;
            Ok(out.success)
        })
        .collect();
    let flags = results.into_iter().collect::<Result<Vec<_>>>()?;
    let rate = flags.iter().filter(|&&s| s).count() as f64 / episodes as f64;
    Ok((rate, flags))
}

/// Success-rate matrix of corrupted-imagination MPC over a σ x drop grid.
#[allow(clippy::too_many_arguments)]
pub fn noise_robustness(
    params: &ParamSet,
    cfg: &ModelConfig,
    env: &EnvConfig,
    tokenizer: &Tokenizer,
    plan_cfg: &PlanConfig,
    sigmas: &[f64],
    drops: &[f64],
    episodes: usize,
    seed: u64,
) -> Result<Vec<NoiseCell>> {
    let mut cells = Vec::with_capacity(sigmas.len() * drops.len());
    for &sigma in sigmas {
        for &drop in drops {
            let (rate, _) = success_rate(
                params,
                cfg,
                env,
                tokenizer,
                plan_cfg,
                episodes,
                seed,
                Some(PredictionCorruption { sigma, drop }),
            )?;
            cells.push(NoiseCell {
                sigma,
                drop,
                success_rate: rate,
                episodes,
            });
        }
    }
    Ok(cells)
}

/// Success rate of executing uniform random actions for the same step
/// budget, on the same task distribution.
pub fn random_action_baseline(env: &EnvConfig, episodes: usize, steps: usize, seed: u64) -> f64 {
    let successes = (0..episodes)
        .into_par_iter()
        .filter(|&e| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(e as u64 + 1);
            let (mut state, goal) = sample_task(&mut rng, env, true);
            for _ in 0..steps {
                if state.dist(&goal) <= env.success_dist {
                    return true;
                }
                let a = [
                    rng.gen_range(-env.a_max..=env.a_max),
                    rng.gen_range(-env.a_max..=env.a_max),
                ];
                state = step(env, &state, a);
            }
            state.dist(&goal) <= env.success_dist
        })
        .count();
    successes as f64 / episodes as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn setup() -> (ModelConfig, EnvConfig, Tokenizer, PlanConfig) {
        let env = EnvConfig::default();
        let cfg = ModelConfig {
            n_layers: 1,
            n_heads: 2,
            embed_dim: 16,
            token_dim: 8,
            action_proj_dim: 4,
            dropout_prob: 0.0,
            ..ModelConfig::default()
        };
        let tok = Tokenizer::new(0, env.patch_size, cfg.token_dim);
        let pc = PlanConfig {
            candidates: 4,
            elites: 2,
            cem_iters: 2,
            horizon: 2,
            max_mpc_iters: 2,
            drop_p: 0.0,
        };
        (cfg, env, tok, pc)
    }

    #[test]
    fn zero_corruption_matches_baseline_bit_for_bit() {
        let (cfg, env, tok, pc) = setup();
        let params = init_params(&cfg, 0).unwrap();
        let (_, base) =
            success_rate(&params, &cfg, &env, &tok, &pc, 3, 5, None).unwrap();
        let cells = noise_robustness(&params, &cfg, &env, &tok, &pc, &[0.0], &[0.0], 3, 5).unwrap();
        let (_, corrupted) = success_rate(
            &params,
            &cfg,
            &env,
            &tok,
            &pc,
            3,
            5,
            Some(PredictionCorruption {
                sigma: 0.0,
                drop: 0.0,
            }),
        )
        .unwrap();
        assert_eq!(base, corrupted);
        assert_eq!(
            cells[0].success_rate,
            base.iter().filter(|&&s| s).count() as f64 / 3.0
        );
    }

    #[test]
    fn grid_shape_and_range() {
        let (cfg, env, tok, pc) = setup();
        let params = init_params(&cfg, 1).unwrap();
        let cells =
            noise_robustness(&params, &cfg, &env, &tok, &pc, &[0.0, 0.5], &[0.0, 0.5], 2, 7)
                .unwrap();
        assert_eq!(cells.len(), 4);
        for c in &cells {
            assert!((0.0..=1.0).contains(&c.success_rate));
            assert_eq!(c.episodes, 2);
        }
    }

    #[test]
    fn random_baseline_rate_in_unit_interval() {
        let env = EnvConfig::default();
        let r = random_action_baseline(&env, 50, 20, 3);
        assert!((0.0..=1.0).contains(&r));
    }

    #[test]
    fn sample_task_respects_side_and_distance() {
        let env = EnvConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let (s, g) = sample_task(&mut rng, &env, true);
            assert_eq!(s.x < env.wall_x, g.x < env.wall_x);
            assert!(s.dist(&g) > 1.5 * env.success_dist);
        }
    }
}
