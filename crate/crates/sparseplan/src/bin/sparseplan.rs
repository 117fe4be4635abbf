use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use sparseplan::analysis::{
    collect_samples, hsic_sweep, mean_baseline_mse, noise_robustness, prediction_error,
    sample_task, train_probe, ProbeConfig, SWEEP_MASKS, SWEEP_SAMPLES,
};
use sparseplan::autodiff::{AdamState, Tensor};
use sparseplan::bench::{
    report, run_bench, write_bench_csv, write_episode_csv, EpisodeRecord, RunConfig,
    EPISODE_CSV_HEADER,
};
use sparseplan::env::{generate_dataset, load_dataset, save_dataset, EnvConfig, Tokenizer};
use sparseplan::model::{
    init_params, load_model, save_model, train_step, MaskPolicy, ModelConfig, ModelMeta,
    TrainSequence,
};
use sparseplan::plan::{mpc_run, PlanConfig, Strategy};
use sparseplan::{Error, Result};

#[derive(Parser)]
#[command(name = "sparseplan", about = "Sparse-imagination world-model planning")]
struct Cli {
    /// master RNG seed
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// TOML configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// output path (file or directory depending on the subcommand)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a random-action trajectory dataset
    GenData {
        #[arg(long, default_value_t = 500)]
        episodes: usize,
        #[arg(long, default_value_t = 30)]
        ep_len: usize,
    },
    /// Train the world model on a dataset
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 5e-4)]
        lr: f64,
        /// attention policy: grouped | full
        #[arg(long, default_value = "grouped")]
        policy: String,
    },
    /// Run MPC-CEM planning episodes and write a per-episode CSV
    Plan(PlanArgs),
    /// Run a manifest-driven benchmark grid
    Bench {
        /// force serial episode execution for clean timing
        #[arg(long)]
        timing_serial: bool,
    },
    /// Analysis instruments
    Analyze {
        #[command(subcommand)]
        what: AnalyzeCmd,
    },
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// TOML file holding an [env] table (defaults used if omitted)
    #[arg(long)]
    env_config: Option<PathBuf>,
    /// random | fixed | lhs | attn-wm | atc | full
    #[arg(long, default_value = "random")]
    strategy: String,
    #[arg(long, default_value_t = 0.5)]
    drop_ratio: f64,
    #[arg(long, default_value_t = 30)]
    episodes: usize,
    /// plan once and execute without replanning
    #[arg(long)]
    no_replan: bool,
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// nHSIC(kept tokens, state) sweep over drop ratios
    Hsic {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.0,0.3,0.5,0.75,0.9")]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = SWEEP_MASKS)]
        masks: usize,
        #[arg(long, default_value_t = SWEEP_SAMPLES)]
        samples: usize,
    },
    /// Attentive-probe state decodability per drop ratio
    Probe {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.0,0.5,0.9")]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        masks: usize,
        #[arg(long, default_value_t = 500)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-5)]
        lr: f64,
    },
    /// Relative L2 subset-prediction error per drop ratio
    Prederr {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.0,0.3,0.5,0.9")]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        trials: usize,
    },
    /// Success rate under corrupted imagination over a sigma x drop grid
    Noise {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.0,0.5,2.0")]
        sigmas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.0,0.5")]
        drops: Vec<f64>,
        #[arg(long, default_value_t = 30)]
        episodes: usize,
    },
}

/// Optional TOML sections shared by gen-data / train / plan.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    env: Option<EnvConfig>,
    model: Option<ModelConfig>,
    plan: Option<PlanConfig>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Toml(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    // bench interprets --config as a RunConfig manifest instead
    let file_cfg = match cli.cmd {
        Cmd::Bench { .. } => FileConfig::default(),
        _ => load_file_config(cli.config.as_deref())?,
    };
    match cli.cmd {
        Cmd::GenData { episodes, ep_len } => {
            let env = file_cfg.env.unwrap_or_default();
            let model = file_cfg.model.unwrap_or_default();
            let tok = Tokenizer::new(cli.seed, env.patch_size, model.token_dim);
            let ds = generate_dataset(&env, &tok, episodes, ep_len, cli.seed)?;
            let out = cli.out.unwrap_or_else(|| PathBuf::from("data.ds"));
            save_dataset(&out, &ds)?;
            println!(
                "wrote {} episodes of {} frames to {}",
                episodes,
                ep_len + 1,
                out.display()
            );
            Ok(())
        }
        Cmd::Train {
            dataset,
            steps,
            batch,
            lr,
            policy,
        } => {
            let policy = match policy.as_str() {
                "grouped" => MaskPolicy::Grouped,
                "full" => MaskPolicy::Full,
                other => return Err(Error::Config(format!("unknown policy '{other}'"))),
            };
            let ds = load_dataset(&dataset)?;
            let cfg = file_cfg.model.unwrap_or_else(|| ModelConfig {
                grid_h: ds.env.grid_side(),
                grid_w: ds.env.grid_side(),
                token_dim: ds.token_dim,
                ..ModelConfig::default()
            });
            cfg.validate()?;
            if cfg.n_tokens() != ds.env.n_tokens() || cfg.token_dim != ds.token_dim {
                return Err(Error::Config(format!(
                    "model expects {}x{} tokens of dim {}, dataset provides {} of dim {}",
                    cfg.grid_h,
                    cfg.grid_w,
                    cfg.token_dim,
                    ds.env.n_tokens(),
                    ds.token_dim
                )));
            }
            let seqs = train_sequences(&ds, cfg.history_len);
            if seqs.is_empty() {
                return Err(Error::Config("dataset episodes too short to train".into()));
            }
            let mut params = init_params(&cfg, cli.seed)?;
            let mut adam = AdamState::new(lr);
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
            let mut last = f64::NAN;
            for step in 0..steps {
                let batch_seqs: Vec<TrainSequence> = seqs
                    .choose_multiple(&mut rng, batch.min(seqs.len()))
                    .cloned()
                    .collect();
                last = train_step(&mut params, &cfg, &batch_seqs, &mut rng, &mut adam, policy)?;
                if step % 100 == 0 || step + 1 == steps {
                    println!("step {step:>6}  loss {last:.6}");
                }
            }
            let out = cli.out.unwrap_or_else(|| PathBuf::from("model.ckpt"));
            save_model(&out, &params, &cfg, policy, ds.tokenizer_seed)?;
            println!("final loss {last:.6}; checkpoint at {}", out.display());
            Ok(())
        }
        Cmd::Plan(args) => {
            let strategy = Strategy::from_str(&args.strategy)?;
            if !args.checkpoint.exists() {
                return Err(Error::Config(format!(
                    "checkpoint {} not found",
                    args.checkpoint.display()
                )));
            }
            let (params, meta) = load_model(&args.checkpoint)?;
            let env = match &args.env_config {
                Some(p) => load_file_config(Some(p))?
                    .env
                    .ok_or_else(|| Error::Config("env config file has no [env] table".into()))?,
                None => file_cfg.env.unwrap_or_default(),
            };
            let plan_cfg = PlanConfig {
                drop_p: args.drop_ratio,
                ..file_cfg.plan.unwrap_or_default()
            };
            let tok = checkpoint_tokenizer(&env, &meta);
            let mut rows = Vec::with_capacity(args.episodes);
            for e in 0..args.episodes {
                let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
                rng.set_stream(e as u64 + 1);
                let (start, goal) = sample_task(&mut rng, &env, true);
                let mpc_seed = rng.gen::<u64>();
                let out = mpc_run(
                    &params,
                    &meta.config,
                    &env,
                    &tok,
                    start,
                    goal,
                    &plan_cfg,
                    strategy,
                    mpc_seed,
                    !args.no_replan,
                    None,
                )?;
                let spi = if out.mpc_iters == 0 {
                    0.0
                } else {
                    out.plan_seconds.iter().sum::<f64>() / out.mpc_iters as f64
                };
                rows.push(EpisodeRecord {
                    episode: e,
                    strategy,
                    p: args.drop_ratio,
                    success: out.success,
                    mpc_iters: out.mpc_iters,
                    plan_seconds_per_iter: spi,
                    forward_calls: out.forward_calls,
                    final_distance: out.final_distance,
                });
            }
            let out = cli.out.unwrap_or_else(|| PathBuf::from("results.csv"));
            write_episode_csv(&out, &rows)?;
            let successes = rows.iter().filter(|r| r.success).count();
            println!(
                "{successes}/{} episodes succeeded; {} (columns: {})",
                rows.len(),
                out.display(),
                EPISODE_CSV_HEADER
            );
            Ok(())
        }
        Cmd::Bench { timing_serial } => {
            let path = cli
                .config
                .ok_or_else(|| Error::Config("bench requires --config manifest.toml".into()))?;
            let mut cfg = RunConfig::load(&path)?;
            if timing_serial {
                cfg.timing_serial = true;
            }
            if let Some(out) = cli.out {
                cfg.out_dir = out;
            }
            cfg.validate()?;
            let (params, meta) = load_model(&cfg.checkpoint)?;
            let tok = checkpoint_tokenizer(&cfg.env, &meta);
            let (rows, episodes) = run_bench(&cfg, &params, &meta.config, &tok)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            write_bench_csv(&cfg.out_dir.join("bench.csv"), &rows)?;
            write_episode_csv(&cfg.out_dir.join("episodes.csv"), &episodes)?;
            let manifest = serde_json::json!({
                "config": toml::to_string(&cfg).map_err(|e| Error::Config(e.to_string()))?,
                "digest": cfg.digest(),
                "mask_policy": meta.mask_policy,
            });
            std::fs::write(
                cfg.out_dir.join("manifest.json"),
                serde_json::to_string_pretty(&manifest)?,
            )?;
            print!("{}", report(&rows)?);
            Ok(())
        }
        Cmd::Analyze { what } => analyze(what, cli.seed, cli.out, &file_cfg),
    }
}

/// Rebuild the frozen tokenizer a checkpoint was trained against.
fn checkpoint_tokenizer(env: &EnvConfig, meta: &ModelMeta) -> Tokenizer {
    Tokenizer::new(meta.tokenizer_seed, env.patch_size, meta.config.token_dim)
}

fn train_sequences(ds: &sparseplan::env::Dataset, history_len: usize) -> Vec<TrainSequence> {
    sparseplan::analysis::validation_sequences(ds, history_len, usize::MAX)
        .into_iter()
        .map(|(history, actions, target)| TrainSequence {
            history,
            actions,
            target,
        })
        .collect()
}

fn analyze(
    what: AnalyzeCmd,
    seed: u64,
    out: Option<PathBuf>,
    file_cfg: &FileConfig,
) -> Result<()> {
    match what {
        AnalyzeCmd::Hsic {
            dataset,
            ratios,
            masks,
            samples,
        } => {
            let ds = load_dataset(&dataset)?;
            let rows = hsic_sweep(&ds, &ratios, masks, samples, seed)?;
            let out = out.unwrap_or_else(|| PathBuf::from("hsic.csv"));
            let mut text = String::from("ratio,mean,std,n_masks\n");
            for r in &rows {
                text.push_str(&format!("{},{},{},{}\n", r.ratio, r.mean, r.std, r.n_masks));
            }
            std::fs::write(&out, text)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
            Ok(())
        }
        AnalyzeCmd::Probe {
            dataset,
            ratios,
            masks,
            epochs,
            lr,
        } => {
            let ds = load_dataset(&dataset)?;
            let (tokens, states) = collect_samples(&ds, SWEEP_SAMPLES.min(count_samples(&ds)))?;
            let samples: Vec<(Tensor, Vec<f64>)> = tokens
                .into_iter()
                .enumerate()
                .map(|(i, t)| (t, states.row(i).to_vec()))
                .collect();
            let split = samples.len() * 3 / 4;
            let cfg = ProbeConfig {
                lr,
                epochs,
                ..ProbeConfig::default()
            };
            let out = out.unwrap_or_else(|| PathBuf::from("probe.csv"));
            let mut text = String::from("ratio,mean,std,baseline\n");
            let n = samples[0].0.rows();
            for &ratio in &ratios {
                let mut finals = Vec::new();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n_masks = if ratio == 0.0 { 1 } else { masks };
                for m in 0..n_masks {
                    let mask = if ratio == 0.0 {
                        sparseplan::plan::DropMask::all(n)
                    } else {
                        sparseplan::plan::sample_mask_random(&mut rng, n, ratio)?
                    };
                    let masked: Vec<(Tensor, Vec<f64>)> = samples
                        .iter()
                        .map(|(x, t)| (x.select_rows(mask.kept()), t.clone()))
                        .collect();
                    let (train, val) = masked.split_at(split);
                    let (_, curve) = train_probe(train, val, &cfg, seed + m as u64)?;
                    finals.push(*curve.last().unwrap());
                }
                let k = finals.len() as f64;
                let mean = finals.iter().sum::<f64>() / k;
                let var = finals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
                let (train, val) = samples.split_at(split);
                let baseline = mean_baseline_mse(train, val);
                text.push_str(&format!("{ratio},{mean},{},{baseline}\n", var.sqrt()));
            }
            std::fs::write(&out, text)?;
            println!("wrote probe table to {}", out.display());
            Ok(())
        }
        AnalyzeCmd::Prederr {
            checkpoint,
            dataset,
            ratios,
            trials,
        } => {
            let (params, meta) = load_model(&checkpoint)?;
            let ds = load_dataset(&dataset)?;
            let out = out.unwrap_or_else(|| PathBuf::from("prederr.csv"));
            let mut text = String::from("ratio,mean,std,excluded\n");
            for &ratio in &ratios {
                let s = prediction_error(&params, &meta.config, &ds, ratio, trials, seed)?;
                text.push_str(&format!("{ratio},{},{},{}\n", s.mean, s.std, s.excluded));
            }
            std::fs::write(&out, text)?;
            println!("wrote prediction-error table to {}", out.display());
            Ok(())
        }
        AnalyzeCmd::Noise {
            checkpoint,
            sigmas,
            drops,
            episodes,
        } => {
            let (params, meta) = load_model(&checkpoint)?;
            let env = file_cfg.env.clone().unwrap_or_default();
            let plan_cfg = file_cfg.plan.clone().unwrap_or_default();
            let tok = checkpoint_tokenizer(&env, &meta);
            let cells = noise_robustness(
                &params,
                &meta.config,
                &env,
                &tok,
                &plan_cfg,
                &sigmas,
                &drops,
                episodes,
                seed,
            )?;
            let out = out.unwrap_or_else(|| PathBuf::from("noise.csv"));
            let mut text = String::from("sigma,drop,success_rate,episodes\n");
            for c in &cells {
                text.push_str(&format!(
                    "{},{},{},{}\n",
                    c.sigma, c.drop, c.success_rate, c.episodes
                ));
            }
            std::fs::write(&out, text)?;
            println!("wrote noise matrix to {}", out.display());
            Ok(())
        }
    }
}

fn count_samples(ds: &sparseplan::env::Dataset) -> usize {
    ds.episodes.iter().map(|e| e.tokens.len()).sum()
}
