use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tensor};
use crate::env::{render, step, EnvConfig, EnvState, Tokenizer};
use crate::error::{Error, Result};
use crate::model::{CallCounter, ModelConfig, PredictionCorruption};
use crate::plan::cem::{atc_objective, cem_plan, subset_objective, PlanConfig};
use crate::plan::cluster::{agglomerative_cluster, kmeans_anchored, ClusterSet};
use crate::plan::dropmask::{keep_count, sample_mask_lhs, sample_mask_random, DropMask};
use crate::plan::score::{mask_from_scores, score_attention_wm};
use crate::token::TokenGrid;

/// How the kept token subset is chosen for imagination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// fresh uniform subset at every MPC iteration
    Random,
    /// one uniform subset drawn per episode
    Fixed,
    /// spatially stratified subset, fresh per iteration
    Lhs,
    /// top tokens by attention received under the world model
    AttnWm,
    /// cluster-pooled tokens anchored to the goal frame's clusters
    Atc,
    /// no dropout
    Full,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "fixed" => Ok(Strategy::Fixed),
            "lhs" => Ok(Strategy::Lhs),
            "attn-wm" => Ok(Strategy::AttnWm),
            "atc" => Ok(Strategy::Atc),
            "full" => Ok(Strategy::Full),
            other => Err(Error::Config(format!("unknown strategy '{other}'"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Strategy::Random => "random",
            Strategy::Fixed => "fixed",
            Strategy::Lhs => "lhs",
            Strategy::AttnWm => "attn-wm",
            Strategy::Atc => "atc",
            Strategy::Full => "full",
        };
        f.write_str(s)
    }
}

/// Result of one planning episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpcOutcome {
    pub success: bool,
    /// planning calls made
    pub mpc_iters: usize,
    /// wall-clock seconds spent inside each planning call
    pub plan_seconds: Vec<f64>,
    pub forward_calls: u64,
    pub final_distance: f64,
    /// kept token positions used by each planning call
    pub masks: Vec<Vec<usize>>,
}

/// Run one goal-reaching episode with MPC-CEM replanning.
///
/// Each MPC iteration checks for success, picks a token subset per the
/// strategy, plans H actions with CEM over the frozen world model, and
/// executes the whole plan in the environment. With `replan = false` the
/// first plan is the only one.
#[allow(clippy::too_many_arguments)]
pub fn mpc_run(
    params: &ParamSet,
    cfg: &ModelConfig,
    env: &EnvConfig,
    tokenizer: &Tokenizer,
    start: EnvState,
    goal: EnvState,
    plan_cfg: &PlanConfig,
    strategy: Strategy,
    seed: u64,
    replan: bool,
    corruption: Option<PredictionCorruption>,
) -> Result<MpcOutcome> {
    plan_cfg.validate()?;
    env.validate()?;
    let n = cfg.n_tokens();
    if n != env.n_tokens() {
        return Err(Error::Config(format!(
            "model has {n} tokens but environment produces {}",
            env.n_tokens()
        )));
    }
    let goal_tokens = tokenizer.tokenize(&render(env, &goal), 0)?.tokens;
    let goal_clusters: Option<ClusterSet> = if strategy == Strategy::Atc {
        Some(agglomerative_cluster(
            &goal_tokens,
            keep_count(n, plan_cfg.drop_p),
        )?)
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = start;
    let mut frames: Vec<Tensor> = vec![tokenizer.tokenize(&render(env, &state), 0)?.tokens];
    let mut actions: Vec<Vec<f64>> = Vec::new();
    let mut fixed_mask: Option<DropMask> = None;
    let counter = CallCounter::new();
    let mut plan_seconds = Vec::new();
    let mut masks = Vec::new();
    let mut mpc_iters = 0;

    for _ in 0..plan_cfg.max_mpc_iters {
        if state.dist(&goal) <= env.success_dist {
            break;
        }
        // context: most recent h+1 frames and the actions between them
        let ctx_len = (cfg.history_len + 1).min(frames.len());
        let ctx_frames = &frames[frames.len() - ctx_len..];
        let ctx_actions: Vec<Vec<f64>> = actions[actions.len() - (ctx_len - 1)..].to_vec();

        // restricted context, positional identities, and objective
        let last = ctx_frames.last().unwrap();
        let (restricted, positions, atc_sizes): (Vec<Tensor>, Vec<usize>, Option<Vec<usize>>) =
            if strategy == Strategy::Atc {
                let cs = kmeans_anchored(last, &goal_clusters.as_ref().unwrap().means)?;
                let pooled = ctx_frames
                    .iter()
                    .map(|f| cs.pool(f))
                    .collect::<Result<Vec<_>>>()?;
                (pooled, cs.medoids(last), Some(cs.sizes.clone()))
            } else {
                let mask = match strategy {
                    Strategy::Full => DropMask::all(n),
                    Strategy::Random => sample_mask_random(&mut rng, n, plan_cfg.drop_p)?,
                    Strategy::Lhs => {
                        sample_mask_lhs(&mut rng, (cfg.grid_h, cfg.grid_w), plan_cfg.drop_p)?
                    }
                    Strategy::Fixed => fixed_mask
                        .get_or_insert(sample_mask_random(&mut rng, n, plan_cfg.drop_p)?)
                        .clone(),
                    Strategy::AttnWm => {
                        let grids: Vec<TokenGrid> = ctx_frames
                            .iter()
                            .enumerate()
                            .map(|(i, f)| TokenGrid::new(f.clone(), i))
                            .collect();
                        let mut acts = ctx_actions.clone();
                        acts.push(vec![0.0; cfg.action_dim]); // current frame: no action yet
                        let scores = score_attention_wm(params, cfg, &grids, &acts)?;
                        mask_from_scores(&scores, plan_cfg.drop_p)?
                    }
                    Strategy::Atc => unreachable!(),
                };
                let restricted: Vec<Tensor> = ctx_frames
                    .iter()
                    .map(|f| f.select_rows(mask.kept()))
                    .collect();
                (restricted, mask.kept().to_vec(), None)
            };
        masks.push(positions.clone());

        let plan_seed = rng.gen::<u64>();
        let t0 = Instant::now();
        let goal_ref = &goal_tokens;
        let goal_cs = goal_clusters.as_ref();
        let pos_ref = &positions;
        let (plan, _) = cem_plan(
            params,
            cfg,
            plan_cfg,
            &restricted,
            &ctx_actions,
            &positions,
            env.a_max,
            plan_seed,
            &counter,
            corruption,
            move |pred| match &atc_sizes {
                Some(sizes) => atc_objective(pred, &goal_cs.unwrap().means, sizes, n),
                None => subset_objective(pred, goal_ref, pos_ref),
            },
        )?;
        plan_seconds.push(t0.elapsed().as_secs_f64());
        mpc_iters += 1;

        for action in &plan {
            state = step(env, &state, [action[0], action[1]]);
            actions.push(action.clone());
            frames.push(tokenizer.tokenize(&render(env, &state), frames.len())?.tokens);
            if state.dist(&goal) <= env.success_dist {
                break;
            }
        }
        if !replan {
            break;
        }
    }

    let final_distance = state.dist(&goal);
    Ok(MpcOutcome {
        success: final_distance <= env.success_dist,
        mpc_iters,
        plan_seconds,
        forward_calls: counter.get(),
        final_distance,
        masks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn small_setup() -> (ModelConfig, EnvConfig, Tokenizer) {
        let env = EnvConfig::default();
        let cfg = ModelConfig {
            n_layers: 1,
            n_heads: 2,
            embed_dim: 16,
            grid_h: 4,
            grid_w: 4,
            token_dim: 8,
            action_dim: 2,
            action_proj_dim: 4,
            history_len: 2,
            dropout_prob: 0.0,
        };
        let tok = Tokenizer::new(0, env.patch_size, cfg.token_dim);
        (cfg, env, tok)
    }

    fn small_plan() -> PlanConfig {
        PlanConfig {
            candidates: 5,
            elites: 2,
            cem_iters: 2,
            horizon: 2,
            max_mpc_iters: 3,
            drop_p: 0.5,
        }
    }

    #[test]
    fn already_at_goal_spends_nothing() {
        let (cfg, env, tok) = small_setup();
        let params = init_params(&cfg, 0).unwrap();
        let s = EnvState::new(0.2, 0.2);
        let out = mpc_run(
            &params,
            &cfg,
            &env,
            &tok,
            s,
            s,
            &small_plan(),
            Strategy::Full,
            1,
            true,
            None,
        )
        .unwrap();
        assert!(out.success);
        assert_eq!(out.mpc_iters, 0);
        assert_eq!(out.forward_calls, 0);
    }

    #[test]
    fn forward_calls_equal_iters_times_kmh() {
        let (cfg, env, tok) = small_setup();
        let params = init_params(&cfg, 0).unwrap();
        let pc = small_plan();
        // far goal, untrained model: expect the full replanning budget
        let out = mpc_run(
            &params,
            &cfg,
            &env,
            &tok,
            EnvState::new(0.1, 0.1),
            EnvState::new(0.9, 0.9),
            &pc,
            Strategy::Random,
            2,
            true,
            None,
        )
        .unwrap();
        assert_eq!(
            out.forward_calls,
            (out.mpc_iters * pc.candidates * pc.cem_iters * pc.horizon) as u64
        );
        assert_eq!(out.plan_seconds.len(), out.mpc_iters);
        assert_eq!(out.masks.len(), out.mpc_iters);
        assert!(out.mpc_iters <= pc.max_mpc_iters);
    }

    #[test]
    fn fixed_strategy_reuses_one_mask() {
        let (cfg, env, tok) = small_setup();
        let params = init_params(&cfg, 0).unwrap();
        let out = mpc_run(
            &params,
            &cfg,
            &env,
            &tok,
            EnvState::new(0.1, 0.1),
            EnvState::new(0.9, 0.9),
            &small_plan(),
            Strategy::Fixed,
            3,
            true,
            None,
        )
        .unwrap();
        assert!(out.mpc_iters >= 2, "untrained model reached the goal?");
        assert!(out.masks.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(out.masks[0].len(), 8);
    }

    #[test]
    fn no_replan_plans_exactly_once() {
        let (cfg, env, tok) = small_setup();
        let params = init_params(&cfg, 0).unwrap();
        let out = mpc_run(
            &params,
            &cfg,
            &env,
            &tok,
            EnvState::new(0.1, 0.1),
            EnvState::new(0.9, 0.9),
            &small_plan(),
            Strategy::Lhs,
            4,
            false,
            None,
        )
        .unwrap();
        assert_eq!(out.mpc_iters, 1);
    }

    #[test]
    fn outcome_is_deterministic_per_seed() {
        let (cfg, env, tok) = small_setup();
        let params = init_params(&cfg, 5).unwrap();
        let run = |seed| {
            mpc_run(
                &params,
                &cfg,
                &env,
                &tok,
                EnvState::new(0.2, 0.8),
                EnvState::new(0.5, 0.2),
                &small_plan(),
                Strategy::Random,
                seed,
                true,
                None,
            )
            .unwrap()
        };
        let (a, b) = (run(11), run(11));
        assert_eq!(a.final_distance, b.final_distance);
        assert_eq!(a.masks, b.masks);
        assert_eq!(a.forward_calls, b.forward_calls);
    }

    #[test]
    fn atc_pools_to_cluster_count() {
        let (cfg, env, tok) = small_setup();
        let params = init_params(&cfg, 6).unwrap();
        let pc = PlanConfig {
            drop_p: 0.75,
            ..small_plan()
        };
        let out = mpc_run(
            &params,
            &cfg,
            &env,
            &tok,
            EnvState::new(0.1, 0.5),
            EnvState::new(0.45, 0.5),
            &pc,
            Strategy::Atc,
            7,
            true,
            None,
        )
        .unwrap();
        for m in &out.masks {
            assert_eq!(m.len(), 4); // round(0.25 * 16)
        }
    }

    #[test]
    fn strategy_parses_all_names() {
        for (s, v) in [
            ("random", Strategy::Random),
            ("fixed", Strategy::Fixed),
            ("lhs", Strategy::Lhs),
            ("attn-wm", Strategy::AttnWm),
            ("atc", Strategy::Atc),
            ("full", Strategy::Full),
        ] {
            assert_eq!(Strategy::from_str(s).unwrap(), v);
            assert_eq!(v.to_string(), s);
        }
        assert!(Strategy::from_str("best").is_err());
    }
}
