use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::model::{rollout, CallCounter, ModelConfig, PredictionCorruption};
use crate::plan::hungarian::{assignment_cost, hungarian_match};

pub const STD_FLOOR: f64 = 1e-3;

/// MPC-CEM planning knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    /// K candidate action sequences per CEM iteration
    pub candidates: usize,
    /// E elites refitting the sampling distribution
    pub elites: usize,
    /// M CEM iterations per planning call
    pub cem_iters: usize,
    /// H imagination horizon
    pub horizon: usize,
    /// replanning budget per episode
    pub max_mpc_iters: usize,
    /// token dropout fraction p
    pub drop_p: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            candidates: 100,
            elites: 10,
            cem_iters: 10,
            horizon: 5,
            max_mpc_iters: 10,
            drop_p: 0.5,
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.elites == 0 || self.elites > self.candidates {
            return Err(Error::Config(format!(
                "elites {} must be in 1..={}",
                self.elites, self.candidates
            )));
        }
        if self.horizon == 0 || self.cem_iters == 0 || self.max_mpc_iters == 0 {
            return Err(Error::Config(
                "horizon, cem_iters and max_mpc_iters must be > 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.drop_p) {
            return Err(Error::Config(format!(
                "drop_p {} outside [0,1)",
                self.drop_p
            )));
        }
        Ok(())
    }
}

/// Latent goal objective on a kept-token subset: mean squared L2 between
/// the predicted rows and the goal rows at the same positions.
pub fn subset_objective(pred: &Tensor, goal: &Tensor, kept: &[usize]) -> Result<f64> {
    if pred.rows() != kept.len() || pred.cols() != goal.cols() {
        return Err(Error::ShapeMismatch {
            op: "subset_objective",
            left: pred.shape.clone(),
            right: vec![kept.len(), goal.cols()],
        });
    }
    let mut total = 0.0;
    for (r, &pos) in kept.iter().enumerate() {
        if pos >= goal.rows() {
            return Err(Error::DegenerateInput(format!(
                "kept position {pos} outside goal grid"
            )));
        }
        total += pred
            .row(r)
            .iter()
            .zip(goal.row(pos))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total / kept.len() as f64)
}

/// Latent goal objective between cluster-pooled tokens: optimal pairing
/// of predicted cluster rows to goal cluster rows, each pair weighted by
/// the predicted cluster's share of the N underlying tokens.
pub fn atc_objective(
    pred: &Tensor,
    goal_means: &Tensor,
    sizes: &[usize],
    n_tokens: usize,
) -> Result<f64> {
    let c = pred.rows();
    if goal_means.rows() != c || sizes.len() != c || goal_means.cols() != pred.cols() {
        return Err(Error::ShapeMismatch {
            op: "atc_objective",
            left: pred.shape.clone(),
            right: goal_means.shape.clone(),
        });
    }
    let mut cost = Tensor::zeros(&[c, c]);
    for i in 0..c {
        let w = sizes[i] as f64 / n_tokens as f64;
        for j in 0..c {
            let d2: f64 = pred
                .row(i)
                .iter()
                .zip(goal_means.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            cost.set(i, j, w * d2);
        }
    }
    let assign = hungarian_match(&cost)?;
    Ok(assignment_cost(&cost, &assign))
}

/// Cross-entropy method over H x A action sequences clipped to
/// [-a_max, a_max]. `eval` scores a batch of candidates (lower is
/// better). Returns the final distribution mean and the best elite score
/// seen at each iteration.
///
/// ```
/// use sparseplan::plan::{cem_optimize, PlanConfig};
/// use rand::SeedableRng;
///
/// let cfg = PlanConfig { candidates: 60, elites: 6, cem_iters: 10,
///                        horizon: 2, max_mpc_iters: 1, drop_p: 0.0 };
/// let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
/// // minimize an analytic quadratic with optimum at 0.04 per coordinate
/// let (plan, _) = cem_optimize(&cfg, 2, 0.1, &mut rng, |_, cands| {
///     Ok(cands.iter().map(|p| p.iter()
///         .map(|a| (a[0] - 0.04).powi(2) + (a[1] - 0.04).powi(2)).sum())
///         .collect())
/// }).unwrap();
/// assert!((plan[0][0] - 0.04).abs() < 0.01);
/// ```
pub fn cem_optimize<F>(
    cfg: &PlanConfig,
    action_dim: usize,
    a_max: f64,
    rng: &mut ChaCha8Rng,
    mut eval: F,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)>
where
    F: FnMut(usize, &[Vec<Vec<f64>>]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let (h, k, e) = (cfg.horizon, cfg.candidates, cfg.elites);
    let mut mean = vec![vec![0.0f64; action_dim]; h];
    let mut std = vec![vec![a_max / 2.0; action_dim]; h];
    let mut best_per_iter = Vec::with_capacity(cfg.cem_iters);
    for iter in 0..cfg.cem_iters {
        let mut cands = Vec::with_capacity(k);
        for _ in 0..k {
            let plan: Vec<Vec<f64>> = (0..h)
                .map(|t| {
                    (0..action_dim)
                        .map(|a| {
                            let z: f64 = StandardNormal.sample(rng);
                            (mean[t][a] + std[t][a] * z).clamp(-a_max, a_max)
                        })
                        .collect()
                })
                .collect();
            cands.push(plan);
        }
        let scores = eval(iter, &cands)?;
        if scores.len() != k {
            return Err(Error::Planning(format!(
                "evaluator returned {} scores for {k} candidates",
                scores.len()
            )));
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            let (sa, sb) = (scores[a], scores[b]);
            sa.partial_cmp(&sb).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        let elite_best = scores[order[0]];
        if !elite_best.is_finite() {
            return Err(Error::Planning(
                "all candidate scores were non-finite".into(),
            ));
        }
        best_per_iter.push(elite_best);
        for t in 0..h {
            for a in 0..action_dim {
                let m: f64 = order[..e]
                    .iter()
                    .map(|&i| cands[i][t][a])
                    .sum::<f64>()
                    / e as f64;
                let var: f64 = order[..e]
                    .iter()
                    .map(|&i| (cands[i][t][a] - m).powi(2))
                    .sum::<f64>()
                    / e as f64;
                mean[t][a] = m;
                std[t][a] = var.sqrt().max(STD_FLOOR);
            }
        }
    }
    for row in mean.iter_mut() {
        for v in row.iter_mut() {
            *v = v.clamp(-a_max, a_max);
        }
    }
    Ok((mean, best_per_iter))
}

/// One CEM planning call against the world model.
///
/// `frames` is the restricted context (each row set at `positions`) and
/// `score` maps a final H-step prediction to a cost. The token subset is
/// fixed for the whole call, so the imagination budget is exactly
/// K * M * H forward passes, all counted on `counter`.
#[allow(clippy::too_many_arguments)]
pub fn cem_plan<S>(
    params: &ParamSet,
    cfg: &ModelConfig,
    plan_cfg: &PlanConfig,
    frames: &[Tensor],
    past_actions: &[Vec<f64>],
    positions: &[usize],
    a_max: f64,
    seed: u64,
    counter: &CallCounter,
    corruption: Option<PredictionCorruption>,
    score: S,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)>
where
    S: Fn(&Tensor) -> Result<f64> + Sync,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = plan_cfg.candidates;
    cem_optimize(plan_cfg, cfg.action_dim, a_max, &mut rng, |iter, cands| {
        cands
            .par_iter()
            .enumerate()
            .map(|(c, plan)| {
                let corr = corruption.map(|pc| {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    r.set_stream((iter * k + c) as u64 + 1);
                    (r, pc)
                });
                let mut corr = corr;
                let pred = rollout(
                    params,
                    cfg,
                    frames,
                    past_actions,
                    plan,
                    positions,
                    counter,
                    corr.as_mut().map(|(r, pc)| (r, *pc)),
                )?;
                let s = score(&pred)?;
                Ok(if s.is_finite() { s } else { f64::INFINITY })
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::token::TokenGrid;

    #[test]
    fn subset_objective_matches_hand_computation() {
        let pred = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]);
        let goal = Tensor::from_rows(&[vec![0.0; 2], vec![1.0, 1.0], vec![0.0, 0.0]]);
        // kept = [1, 2]: ((1-1)^2+(0-1)^2 + (0-0)^2+(2-0)^2) / 2 = 2.5
        let v = subset_objective(&pred, &goal, &[1, 2]).unwrap();
        assert!((v - 2.5).abs() < 1e-14);
    }

    #[test]
    fn subset_objective_is_zero_at_goal() {
        let goal = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let pred = goal.select_rows(&[0, 2]);
        assert_eq!(subset_objective(&pred, &goal, &[0, 2]).unwrap(), 0.0);
    }

    #[test]
    fn atc_objective_finds_the_permutation() {
        let pred = Tensor::from_rows(&[vec![10.0, 10.0], vec![0.0, 0.0]]);
        let goal = Tensor::from_rows(&[vec![0.1, 0.0], vec![10.0, 10.1]]);
        // best pairing is pred0<->goal1, pred1<->goal0
        let v = atc_objective(&pred, &goal, &[2, 2], 4).unwrap();
        let expect = 0.5 * 0.01 + 0.5 * 0.01;
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn cem_solves_analytic_quadratic() {
        let cfg = PlanConfig {
            candidates: 60,
            elites: 6,
            cem_iters: 15,
            horizon: 3,
            max_mpc_iters: 1,
            drop_p: 0.0,
        };
        let target = [0.03, -0.05];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (plan, best) = cem_optimize(&cfg, 2, 0.1, &mut rng, |_, cands| {
            Ok(cands
                .iter()
                .map(|p| {
                    p.iter()
                        .map(|a| (a[0] - target[0]).powi(2) + (a[1] - target[1]).powi(2))
                        .sum()
                })
                .collect())
        })
        .unwrap();
        for step in &plan {
            assert!((step[0] - target[0]).abs() < 0.01, "{step:?}");
            assert!((step[1] - target[1]).abs() < 0.01, "{step:?}");
        }
        assert!(best.last().unwrap() < best.first().unwrap());
    }

    #[test]
    fn cem_respects_action_bounds() {
        let cfg = PlanConfig {
            candidates: 30,
            elites: 5,
            cem_iters: 5,
            horizon: 2,
            max_mpc_iters: 1,
            drop_p: 0.0,
        };
        // optimum far outside the feasible box: plan must sit on the edge
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (plan, _) = cem_optimize(&cfg, 1, 0.1, &mut rng, |_, cands| {
            Ok(cands.iter().map(|p| (p[0][0] - 5.0).powi(2)).collect())
        })
        .unwrap();
        assert!(plan[0][0] <= 0.1 && plan[0][0] > 0.09);
    }

    #[test]
    fn constant_objective_keeps_std_floored_and_finite() {
        let cfg = PlanConfig {
            candidates: 20,
            elites: 4,
            cem_iters: 8,
            horizon: 2,
            max_mpc_iters: 1,
            drop_p: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (plan, best) = cem_optimize(&cfg, 2, 0.1, &mut rng, |_, cands| {
            Ok(vec![1.0; cands.len()])
        })
        .unwrap();
        assert!(plan.iter().flatten().all(|v| v.is_finite()));
        assert!(best.iter().all(|&b| b == 1.0));
    }

    #[test]
    fn all_nonfinite_scores_error() {
        let cfg = PlanConfig {
            candidates: 4,
            elites: 2,
            cem_iters: 2,
            horizon: 1,
            max_mpc_iters: 1,
            drop_p: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = cem_optimize(&cfg, 1, 0.1, &mut rng, |_, cands| {
            Ok(vec![f64::INFINITY; cands.len()])
        });
        assert!(r.is_err());
    }

    #[test]
    fn bad_elite_count_errors() {
        let cfg = PlanConfig {
            elites: 0,
            ..PlanConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = PlanConfig {
            candidates: 5,
            elites: 6,
            ..PlanConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            n_heads: 2,
            embed_dim: 16,
            grid_h: 2,
            grid_w: 2,
            token_dim: 4,
            action_dim: 2,
            action_proj_dim: 4,
            history_len: 2,
            dropout_prob: 0.0,
        }
    }

    #[test]
    fn cem_plan_uses_exactly_k_m_h_forward_calls() {
        let cfg = tiny_cfg();
        let params = init_params(&cfg, 0).unwrap();
        let plan_cfg = PlanConfig {
            candidates: 7,
            elites: 2,
            cem_iters: 3,
            horizon: 2,
            max_mpc_iters: 1,
            drop_p: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let frame = Tensor::randn(&mut rng, &[2, cfg.token_dim], 0.5);
        let goal = Tensor::randn(&mut rng, &[cfg.n_tokens(), cfg.token_dim], 0.5);
        let kept = vec![0usize, 3];
        let counter = CallCounter::new();
        cem_plan(
            &params,
            &cfg,
            &plan_cfg,
            &[frame],
            &[],
            &kept,
            0.1,
            9,
            &counter,
            None,
            |pred| subset_objective(pred, &goal, &kept),
        )
        .unwrap();
        assert_eq!(counter.get(), 7 * 3 * 2);
    }

    #[test]
    fn cem_plan_is_deterministic_per_seed() {
        let cfg = tiny_cfg();
        let params = init_params(&cfg, 1).unwrap();
        let plan_cfg = PlanConfig {
            candidates: 6,
            elites: 2,
            cem_iters: 2,
            horizon: 2,
            max_mpc_iters: 1,
            drop_p: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let grid = TokenGrid::new(
            Tensor::randn(&mut rng, &[cfg.n_tokens(), cfg.token_dim], 0.5),
            0,
        );
        let goal = Tensor::randn(&mut rng, &[cfg.n_tokens(), cfg.token_dim], 0.5);
        let kept: Vec<usize> = (0..cfg.n_tokens()).collect();
        let run = || {
            let counter = CallCounter::new();
            cem_plan(
                &params,
                &cfg,
                &plan_cfg,
                &[grid.tokens.clone()],
                &[],
                &kept,
                0.1,
                42,
                &counter,
                None,
                |pred| subset_objective(pred, &goal, &kept),
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }
}
