//! Command-line front end: theory verification, training, sweeps and the
//! representation diagnostics.

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use ortho_bottleneck::diagnostics::{effective_rank, export_manifold, read_feature_csv, write_manifold_csv};
use ortho_bottleneck::envs::{make_env, Environment};
use ortho_bottleneck::harness::{run_sweep, run_training, write_summary_csv, ExperimentConfig, SweepAxis};
use ortho_bottleneck::nn::load_checkpoint;
use ortho_bottleneck::realizability::{run_theory_case, theory_case_grid, TheoryCaseResult, TheoryOptions, PRECOND_DIRECT_MIN};
use serde_json::json;

#[derive(Parser)]
#[command(name = "ortho-bottleneck", version, about = "Fixed orthonormal bottlenecks for value-based and actor-critic RL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check realizability, trainability equivalence and Gaussian preconditioning.
    VerifyTheory {
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long = "dims-max", default_value_t = 32)]
        dims_max: usize,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Use a tanh MLP head of this hidden width (checked at 1e-8).
        #[arg(long = "head-hidden", default_value_t = 0)]
        head_hidden: usize,
        /// Write the full JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one seed of an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long = "out-dir", default_value = "runs")]
        out_dir: PathBuf,
    },
    /// Run every (axis value, seed) cell and aggregate IQM with bootstrap CIs.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `k=none,1,2,4,8` or `width=64,128,256`.
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long = "out-dir", default_value = "sweeps")]
        out_dir: PathBuf,
        /// Worker threads; defaults to the available cores.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Effective rank of a CSV batch of feature rows.
    Rank {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        delta: f64,
    },
    /// Export bottleneck coordinates along greedy episodes of a checkpoint.
    Manifold {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long)]
        episodes: usize,
        #[arg(long)]
        out: PathBuf,
        /// Reset seed of the first episode.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn verify_theory(seeds: usize, dims_max: usize, steps: usize, head_hidden: usize, out: Option<PathBuf>) -> Result<bool> {
    if seeds == 0 {
        bail!("--seeds must be positive");
    }
    let opts = TheoryOptions { seeds, dims_max, steps, head_hidden, ..TheoryOptions::default() };
    let cases: Vec<TheoryCaseResult> = theory_case_grid(&opts)
        .iter()
        .map(run_theory_case)
        .collect::<Result<_, _>>()?;
    let failed: Vec<u64> = cases.iter().filter(|c| !c.pass).map(|c| c.seed).collect();
    let diverged = cases.iter().filter(|c| c.precond_direct_dev > PRECOND_DIRECT_MIN).count();
    // At least 90% of cases must show the Gaussian control drifting away.
    let needed = (cases.len() * 9).div_ceil(10);
    let max = |f: fn(&TheoryCaseResult) -> f64| cases.iter().map(f).fold(0.0, f64::max);
    let pass = failed.is_empty() && diverged >= needed;
    let summary = json!({
        "cases": cases.len(),
        "failed_seeds": failed,
        "max_equivalence_deviation": max(|c| c.max_deviation),
        "max_theta_deviation": max(|c| c.theta_deviation),
        "max_realization_error": max(|c| c.realization_error.unwrap_or(0.0)),
        "max_preconditioned_recurrence_deviation": max(|c| c.precond_closed_form_dev),
        "gaussian_drift_cases": diverged,
        "gaussian_drift_required": needed,
        "exploratory_upstream_max_deviation": max(|c| c.upstream.max_deviation.max(c.upstream.upstream_deviation)),
        "pass": pass,
    });
    if let Some(path) = out {
        let report = json!({
            "options": { "seeds": seeds, "dims_max": dims_max, "steps": steps, "head_hidden": head_hidden,
                         "lr": opts.lr, "precond_lr": opts.precond_lr, "precond_steps": opts.precond_steps },
            "summary": summary,
            "cases": cases,
        });
        fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(pass)
}

fn train(config: PathBuf, seed: u64, out_dir: PathBuf) -> Result<bool> {
    let cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
    info!("training {} / {} seed {seed}, k = {:?}", cfg.env, cfg.algorithm, cfg.k);
    let run = run_training(&cfg, seed, Some(&out_dir))?;
    let summary = json!({
        "seed": seed,
        "final_return": run.final_return,
        "final_feature_norm": run.final_feature_norm,
        "eval_points": run.curve.len(),
        "basis_intact": run.basis_intact,
        "failure": run.failure,
        "run_dir": run.run_dir,
    });
    println!("{}", serde_json::to_string(&summary)?);
    Ok(run.succeeded() && run.basis_intact)
}

fn sweep(config: PathBuf, axis: SweepAxis, out_dir: PathBuf, workers: Option<usize>) -> Result<bool> {
    let cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
    let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    info!("sweeping {} values x {} seeds on {workers} workers", axis.len(), cfg.seeds.len());
    let (result, _) = run_sweep(&cfg, &axis, Some(&out_dir), workers)?;
    write_summary_csv(&result, io::stdout().lock())?;
    Ok(true)
}

fn rank(features: PathBuf, delta: f64) -> Result<bool> {
    let file = fs::File::open(&features).with_context(|| format!("opening {}", features.display()))?;
    let x = read_feature_csv(file)?;
    let report = effective_rank(&x, delta)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(true)
}

fn manifold(checkpoint: PathBuf, env: String, episodes: usize, out: PathBuf, seed: u64) -> Result<bool> {
    let net = load_checkpoint(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let mut env = make_env(&env)?;
    if env.observation_dim() != net.input_dim() {
        bail!(
            "checkpoint expects {}-dimensional observations, environment gives {}",
            net.input_dim(),
            env.observation_dim()
        );
    }
    let records = export_manifold(&net, &mut env, episodes, seed)?;
    let file = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    write_manifold_csv(&records, net.feature_dim(), io::BufWriter::new(file))?;
    info!("wrote {} rows to {}", records.len(), out.display());
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::VerifyTheory { seeds, dims_max, steps, head_hidden, out } => {
            verify_theory(seeds, dims_max, steps, head_hidden, out)
        }
        Command::Train { config, seed, out_dir } => train(config, seed, out_dir),
        Command::Sweep { config, axis, out_dir, workers } => sweep(config, axis, out_dir, workers),
        Command::Rank { features, delta } => rank(features, delta),
        Command::Manifold { checkpoint, env, episodes, out, seed } => manifold(checkpoint, env, episodes, out, seed),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {e:#}");
            ExitCode::from(2)
        }
    }
}
