//! `meg` — train, sample and evaluate maximum-entropy-generator energy
//! models.
//!
//! Exit codes: 0 success, 1 usage/configuration, 2 runtime or numeric fault,
//! 3 verification failure.

mod commands;
mod dataset;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use meg_core::config::{parse_config, RunConfig};
use meg_core::error::{MegError, Result};
use meg_core::sampler::SampleSpace;
use meg_core::trainer::Checkpoint;

const PRESETS: &[(&str, &str)] = &[
    ("toy-25gaussians", include_str!("../presets/toy-25gaussians.toml")),
    ("toy-8gaussians", include_str!("../presets/toy-8gaussians.toml")),
    ("toy-swissroll", include_str!("../presets/toy-swissroll.toml")),
    ("stackedmnist-3", include_str!("../presets/stackedmnist-3.toml")),
    ("stackedmnist-4", include_str!("../presets/stackedmnist-4.toml")),
    ("kdd99", include_str!("../presets/kdd99.toml")),
    ("mnist-heldout", include_str!("../presets/mnist-heldout.toml")),
];

#[derive(Parser)]
#[command(
    name = "meg",
    about = "Energy-based models with an amortized maximum-entropy generator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file (TOML).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Built-in preset name (see `--list-presets`).
    #[arg(short, long)]
    preset: Option<String>,
    /// Override a config key, e.g. --set training.seed=7 (repeatable;
    /// precedence: command line > file > defaults).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output root for run directories.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct CheckpointArgs {
    /// Run directory produced by `train` (uses its config.toml and final
    /// checkpoint).
    #[arg(long)]
    run: Option<PathBuf>,
    /// Explicit checkpoint file (requires --config or --preset).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the energy function, generator and statistics network.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Resume from a checkpoint, continuing in its directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Draw MALA-refined samples from a trained model.
    Sample {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        ckpt: CheckpointArgs,
        /// Number of parallel chains.
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long)]
        chain_length: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long)]
        step_size: Option<f64>,
        /// Chain space: latent or visible.
        #[arg(long)]
        space: Option<String>,
        /// Run matched latent and visible chains and report both.
        #[arg(long)]
        compare: bool,
    },
    /// Evaluate the normalized 2D density grid of a trained energy.
    EvalDensity {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        ckpt: CheckpointArgs,
    },
    /// Mode-coverage statistics of a trained generator.
    EvalModes {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        ckpt: CheckpointArgs,
    },
    /// Score-norm anomaly detection metrics on the dataset's test split.
    EvalAnomaly {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        ckpt: CheckpointArgs,
    },
    /// Run the gradient, MI and MALA verification suites.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// List the built-in presets.
    ListPresets,
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let base = match (&args.config, &args.preset) {
        (Some(path), None) => std::fs::read_to_string(path)
            .map_err(|e| MegError::config(format!("cannot read config {path:?}: {e}")))?,
        (None, Some(name)) => PRESETS
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, text)| text.to_string())
            .ok_or_else(|| {
                MegError::config(format!(
                    "unknown preset '{name}'; available: {}",
                    PRESETS.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
                ))
            })?,
        (None, None) => String::new(),
        (Some(_), Some(_)) => {
            return Err(MegError::config("give either --config or --preset, not both"));
        }
    };
    parse_config(&base, &args.overrides)
}

/// Resolves (config, checkpoint) from either a run directory or an explicit
/// pair.
fn load_run(cfg_args: &ConfigArgs, ckpt_args: &CheckpointArgs) -> Result<(RunConfig, Checkpoint)> {
    match (&ckpt_args.run, &ckpt_args.checkpoint) {
        (Some(run_dir), None) => {
            let config_path = run_dir.join("config.toml");
            let text = std::fs::read_to_string(&config_path).map_err(|e| {
                MegError::config(format!("run directory has no config.toml: {e}"))
            })?;
            let cfg = parse_config(&text, &cfg_args.overrides)?;
            let ckpt_path = run_dir.join("checkpoint-final.ckpt");
            let ckpt = Checkpoint::load(&ckpt_path)?;
            Ok((cfg, ckpt))
        }
        (None, Some(ckpt_path)) => {
            if cfg_args.config.is_none() && cfg_args.preset.is_none() {
                return Err(MegError::config(
                    "--checkpoint needs --config or --preset for the evaluation settings",
                ));
            }
            let cfg = load_config(cfg_args)?;
            let ckpt = Checkpoint::load(ckpt_path)?;
            Ok((cfg, ckpt))
        }
        (None, None) => Err(MegError::config("give --run DIR or --checkpoint FILE")),
        (Some(_), Some(_)) => {
            Err(MegError::config("give either --run or --checkpoint, not both"))
        }
    }
}

fn exit_code_for(err: &MegError) -> u8 {
    match err {
        MegError::Config(_) | MegError::Scope(_) => 1,
        _ => 2,
    }
}

fn run() -> std::result::Result<u8, (MegError, u8)> {
    let cli = Cli::parse();
    let fail = |e: MegError| {
        let code = exit_code_for(&e);
        (e, code)
    };

    match cli.command {
        Command::Train { cfg, resume } => {
            let run_cfg = load_config(&cfg).map_err(fail)?;
            let dir = commands::cmd_train(&run_cfg, &cfg.out, resume.as_deref()).map_err(fail)?;
            println!("run directory: {}", dir.display());
            Ok(0)
        }
        Command::Sample { cfg, ckpt, count, chain_length, burn_in, step_size, space, compare } => {
            let (mut run_cfg, checkpoint) = load_run(&cfg, &ckpt).map_err(fail)?;
            if let Some(v) = chain_length {
                run_cfg.sampler.chain_length = v;
            }
            if let Some(v) = burn_in {
                run_cfg.sampler.burn_in = v;
            }
            if let Some(v) = step_size {
                run_cfg.sampler.step_size = v;
            }
            if let Some(s) = space {
                run_cfg.sampler.space = match s.as_str() {
                    "latent" => SampleSpace::Latent,
                    "visible" => SampleSpace::Visible,
                    other => {
                        return Err(fail(MegError::config(format!(
                            "unknown space '{other}' (latent or visible)"
                        ))))
                    }
                };
            }
            run_cfg.sampler.validate().map_err(fail)?;
            let args = commands::SampleArgs { count, compare };
            let dir =
                commands::cmd_sample(&run_cfg, &checkpoint, &args, &cfg.out).map_err(fail)?;
            println!("run directory: {}", dir.display());
            Ok(0)
        }
        Command::EvalDensity { cfg, ckpt } => {
            let (run_cfg, checkpoint) = load_run(&cfg, &ckpt).map_err(fail)?;
            let dir =
                commands::cmd_eval_density(&run_cfg, &checkpoint, &cfg.out).map_err(fail)?;
            println!("run directory: {}", dir.display());
            Ok(0)
        }
        Command::EvalModes { cfg, ckpt } => {
            let (run_cfg, checkpoint) = load_run(&cfg, &ckpt).map_err(fail)?;
            let dir = commands::cmd_eval_modes(&run_cfg, &checkpoint, &cfg.out).map_err(fail)?;
            println!("run directory: {}", dir.display());
            Ok(0)
        }
        Command::EvalAnomaly { cfg, ckpt } => {
            let (run_cfg, checkpoint) = load_run(&cfg, &ckpt).map_err(fail)?;
            let dir =
                commands::cmd_eval_anomaly(&run_cfg, &checkpoint, &cfg.out).map_err(fail)?;
            println!("run directory: {}", dir.display());
            Ok(0)
        }
        Command::Check { seed } => {
            let all_passed = commands::cmd_check(seed).map_err(fail)?;
            Ok(if all_passed { 0 } else { 3 })
        }
        Command::ListPresets => {
            for (name, _) in PRESETS {
                println!("{name}");
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err((err, code)) => {
            eprintln!("error: {err}");
            ExitCode::from(code)
        }
    }
}
