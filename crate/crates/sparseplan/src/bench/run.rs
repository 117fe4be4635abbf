use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::sample_task;
use crate::autodiff::ParamSet;
use crate::env::{EnvConfig, Tokenizer};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::plan::{mpc_run, PlanConfig, Strategy};

/// One planning episode's results, matching the `plan` subcommand CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub strategy: Strategy,
    pub p: f64,
    pub success: bool,
    pub mpc_iters: usize,
    pub plan_seconds_per_iter: f64,
    pub forward_calls: u64,
    pub final_distance: f64,
}

/// One benchmark cell aggregated over its episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub strategy: Strategy,
    pub p: f64,
    pub success_rate: f64,
    pub mean_plan_seconds: f64,
    /// percent change of mean plan seconds vs the Full p=0 row
    pub percent_change: f64,
    pub forward_calls: u64,
    pub episodes: usize,
}

/// Run every episode of one (strategy, p) cell. Tasks and seeds derive
/// from the manifest seed and episode index only, so every cell faces
/// the same task set and reruns are deterministic.
#[allow(clippy::too_many_arguments)]
pub fn run_cell(
    params: &ParamSet,
    cfg: &ModelConfig,
    env: &EnvConfig,
    tokenizer: &Tokenizer,
    plan_cfg: &PlanConfig,
    strategy: Strategy,
    p: f64,
    episodes: usize,
    seed: u64,
    serial: bool,
) -> Result<Vec<EpisodeRecord>> {
    let pc = PlanConfig {
        drop_p: p,
        ..plan_cfg.clone()
    };
    let one = |e: usize| -> Result<EpisodeRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(e as u64 + 1);
        let (start, goal) = sample_task(&mut rng, env, true);
        let mpc_seed = rng.gen::<u64>();
        let out = mpc_run(
            params, cfg, env, tokenizer, start, goal, &pc, strategy, mpc_seed, true, None,
        )?;
        let spi = if out.mpc_iters == 0 {
            0.0
        } else {
            out.plan_seconds.iter().sum::<f64>() / out.mpc_iters as f64
        };
        Ok(EpisodeRecord {
            episode: e,
            strategy,
            p,
            success: out.success,
            mpc_iters: out.mpc_iters,
            plan_seconds_per_iter: spi,
            forward_calls: out.forward_calls,
            final_distance: out.final_distance,
        })
    };
    if serial {
        (0..episodes).map(one).collect()
    } else {
        (0..episodes).into_par_iter().map(one).collect()
    }
}

/// Aggregate a cell's episodes into one table row (percent change filled
/// in later against the baseline row).
pub fn aggregate(records: &[EpisodeRecord]) -> Result<BenchRecord> {
    if records.is_empty() {
        return Err(Error::DegenerateInput("empty benchmark cell".into()));
    }
    let n = records.len() as f64;
    let planned: Vec<&EpisodeRecord> = records.iter().filter(|r| r.mpc_iters > 0).collect();
    let mean_plan_seconds = if planned.is_empty() {
        0.0
    } else {
        planned.iter().map(|r| r.plan_seconds_per_iter).sum::<f64>() / planned.len() as f64
    };
    Ok(BenchRecord {
        strategy: records[0].strategy,
        p: records[0].p,
        success_rate: records.iter().filter(|r| r.success).count() as f64 / n,
        mean_plan_seconds,
        percent_change: 0.0,
        forward_calls: records.iter().map(|r| r.forward_calls).sum(),
        episodes: records.len(),
    })
}

/// Fill the percent-change column of every row against the Full p=0 row,
/// which must be present.
pub fn fill_percent_change(rows: &mut [BenchRecord]) -> Result<()> {
    let base = rows
        .iter()
        .find(|r| r.strategy == Strategy::Full && r.p == 0.0)
        .ok_or_else(|| Error::Config("bench table has no Full p=0 baseline row".into()))?
        .mean_plan_seconds;
    if base <= 0.0 {
        return Err(Error::DegenerateInput(
            "baseline plan time is zero; cannot express percent change".into(),
        ));
    }
    for r in rows.iter_mut() {
        r.percent_change = (r.mean_plan_seconds - base) / base * 100.0;
    }
    Ok(())
}

/// Run the whole benchmark: every (strategy, p) cell plus the Full p=0
/// baseline row if the grid does not already contain it.
pub fn run_bench(
    cfg: &crate::bench::RunConfig,
    params: &ParamSet,
    model_cfg: &ModelConfig,
    tokenizer: &Tokenizer,
) -> Result<(Vec<BenchRecord>, Vec<EpisodeRecord>)> {
    let mut cells: Vec<(Strategy, f64)> = vec![(Strategy::Full, 0.0)];
    for &s in &cfg.strategies {
        for &p in &cfg.drop_ratios {
            let cell = (s, p);
            let is_baseline = s == Strategy::Full && p == 0.0;
            if !is_baseline && !cells.contains(&cell) {
                cells.push(cell);
            }
        }
    }
    let mut rows = Vec::with_capacity(cells.len());
    let mut all_episodes = Vec::new();
    for (s, p) in cells {
        let eps = run_cell(
            params,
            model_cfg,
            &cfg.env,
            tokenizer,
            &cfg.plan,
            s,
            p,
            cfg.episodes,
            cfg.seed,
            cfg.timing_serial,
        )?;
        rows.push(aggregate(&eps)?);
        all_episodes.extend(eps);
    }
    fill_percent_change(&mut rows)?;
    Ok((rows, all_episodes))
}
