//! Command-line driver: generate ground-truth data, train a model,
//! evaluate a checkpoint, or sweep protocols and time-scales.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stochfit::error::Error;
use stochfit::experiments::config::RunConfig;
use stochfit::experiments::io::{
    read_checkpoint, write_checkpoint, write_eval_csv, write_metrics_csv, write_noise_sidecar,
    write_sweep_csv, write_trajectories_csv, Checkpoint,
};
use stochfit::experiments::{
    eval, generate_training_data, run_sweep, run_training, ExperimentKind,
};

#[derive(Parser)]
#[command(
    name = "stochfit",
    version,
    about = "Learn stochastic-dynamics models from trajectories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate ground-truth trajectories and write them out.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's output dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run training and write metrics plus a checkpoint per run.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint: recovery errors and radial-histogram
    /// distances against the configured target.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cartesian sweep over protocols and tau values.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Toml(_) | Error::InvalidArgument(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn load(config: &Path, seed: Option<u64>) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig, out: Option<PathBuf>) -> Result<PathBuf, Error> {
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn run() -> Result<(), Error> {
    match Cli::parse().command {
        Command::Generate { config, out } => {
            let cfg = load(&config, None)?;
            let dir = out_dir(&cfg, out)?;
            let target = cfg.target_params()?;
            let data = generate_training_data(
                &target,
                &cfg.data.init,
                cfg.data.n_trajs,
                cfg.master_seed,
                0,
            )?;
            write_trajectories_csv(&dir.join("data.csv"), &data)?;
            write_noise_sidecar(&dir.join("data_noise.bin"), &data)?;
            println!(
                "wrote {} trajectories ({} steps, dim {}) to {}",
                data.len(),
                cfg.n_steps,
                cfg.dim,
                dir.display()
            );
        }
        Command::Train { config, seed, out } => {
            let cfg = load(&config, seed)?;
            let dir = out_dir(&cfg, out)?;
            for run in 0..cfg.runs as u64 {
                let outcome = run_training(&cfg, run)?;
                write_metrics_csv(&dir.join(format!("metrics_run{run}.csv")), &outcome.metrics)?;
                write_checkpoint(
                    &dir.join(format!("checkpoint_run{run}.json")),
                    &Checkpoint {
                        epoch: cfg.epochs,
                        master_seed: cfg.master_seed,
                        run,
                        params: outcome.final_params.clone(),
                        adam: outcome.adam.clone(),
                    },
                )?;
                let last = outcome
                    .metrics
                    .rows
                    .last()
                    .map(|r| r.loss)
                    .unwrap_or(f64::NAN);
                print!("run {run}: final loss {last:.3e}");
                for (name, err) in &outcome.metrics.final_rel_errors {
                    print!("  eps_{name} {err:.3e}");
                }
                println!();
            }
        }
        Command::Evaluate {
            config,
            checkpoint,
            out,
        } => {
            let cfg = load(&config, None)?;
            let dir = out_dir(&cfg, out)?;
            let ckpt = read_checkpoint(&checkpoint)?;
            match cfg.experiment {
                ExperimentKind::OuRecovery => {
                    let target = cfg.target_params()?;
                    println!("channel  estimate  target  eps_rel");
                    for (name, value) in ckpt.params.scalar_channel_values() {
                        let truth = match name.as_str() {
                            "k0" => match &target.force {
                                stochfit::model::ForceKind::Linear { stiffness, .. } => *stiffness,
                                _ => continue,
                            },
                            "gamma" => target.gamma,
                            "kbt" => target.kbt,
                            _ => continue,
                        };
                        println!(
                            "{name}  {value:.6}  {truth:.6}  {:.3e}",
                            eval::rel_error(value, truth)
                        );
                    }
                }
                ExperimentKind::ForceLaw => {
                    let report = eval::l1_report(&cfg, &ckpt.params)?;
                    write_eval_csv(&dir.join("l1_eval.csv"), &report)?;
                    for (step, l1) in &report {
                        println!("i_step {step}: L1 radial error {l1:.4}");
                    }
                }
            }
        }
        Command::Sweep { config, seed, out } => {
            let cfg = load(&config, seed)?;
            let dir = out_dir(&cfg, out)?;
            let rows = run_sweep(&cfg)?;
            write_sweep_csv(&dir.join("sweep.csv"), &rows)?;
            for row in &rows {
                print!("{:?} tau={:.3e}", row.protocol, row.tau);
                for (name, mean, std) in &row.stats {
                    print!("  {name} {mean:.3e} +- {std:.1e}");
                }
                println!();
            }
        }
    }
    Ok(())
}
