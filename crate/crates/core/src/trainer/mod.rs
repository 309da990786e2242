//! The alternating training loop: `energy_steps` energy updates per
//! iteration, then one per-dimension latent shuffle feeding a joint
//! generator/statistics phase whose two Adam updates are computed from the
//! same forward pass before either network changes.

mod adam;
mod checkpoint;
mod config;
mod stream;

pub use adam::{adam_step, AdamHyperParams, OptimizerState};
pub use checkpoint::{hash_data, Checkpoint, FORMAT_VERSION};
pub use config::{ModelConfig, NetworkConfig, TrainingConfig};
pub use stream::{DataStream, StreamState};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{MegError, Result};
use crate::nn::{param_hash, EnergyFunction, Generator, LatentPrior, StatisticsNetwork};
use crate::objectives::{
    energy_loss_with_grads, generator_statistics_grads, shuffle_marginals, LossBreakdown,
};
use crate::rng::{self, RngStream};

/// The three networks as one trainable unit.
#[derive(Debug, Clone)]
pub struct Models {
    pub energy: EnergyFunction<f32>,
    pub generator: Generator<f32>,
    pub stats: StatisticsNetwork<f32>,
}

impl Models {
    /// Fresh fan-in-uniform initialization from the run seed.
    pub fn init(data_dim: usize, cfg: &TrainingConfig, model_cfg: &ModelConfig) -> Result<Self> {
        let mut rng = rng::stream(cfg.seed, rng::streams::INIT);
        let energy = EnergyFunction::init(data_dim, &model_cfg.energy.spec(), &mut rng)?;
        let generator =
            Generator::init(cfg.latent_dim, data_dim, &model_cfg.generator.spec(), &mut rng)?;
        let stats = StatisticsNetwork::init(
            data_dim,
            cfg.latent_dim,
            &model_cfg.statistics.spec(),
            &mut rng,
        )?;
        Ok(Models { energy, generator, stats })
    }

    pub fn parameter_hashes(&self) -> [String; 3] {
        [
            param_hash(&self.energy.net),
            param_hash(&self.generator.net),
            param_hash(&self.stats.net),
        ]
    }
}

/// Everything `run_training` wrote, for the manifest.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub metrics_path: PathBuf,
    pub checkpoint_paths: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
    pub eval_path: Option<PathBuf>,
}

/// Optional per-`eval_every` metrics callback (anomaly AUPRC/F1 and the
/// like). Returned pairs land in `eval.csv` next to the training metrics.
pub type EvalHook<'a> = &'a mut dyn FnMut(&Models, u64) -> Vec<(String, f64)>;

#[derive(Debug)]
pub struct Trainer {
    pub cfg: TrainingConfig,
    pub model_cfg: ModelConfig,
    pub models: Models,
    pub opt_energy: OptimizerState<f32>,
    pub opt_generator: OptimizerState<f32>,
    pub opt_stats: OptimizerState<f32>,
    pub iteration: u64,
    prior: LatentPrior,
    rng: RngStream,
    stream: DataStream,
    data_sha256: [u8; 32],
}

impl Trainer {
    pub fn new(cfg: TrainingConfig, model_cfg: ModelConfig, data: Array2<f32>) -> Result<Self> {
        cfg.validate()?;
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(MegError::config("training data must be non-empty"));
        }
        let models = Models::init(data.ncols(), &cfg, &model_cfg)?;
        let prior = LatentPrior::new(cfg.latent_dim)?;
        let opt_energy = OptimizerState::new(models.energy.net.n_params());
        let opt_generator = OptimizerState::new(models.generator.net.n_params());
        let opt_stats = OptimizerState::new(models.stats.net.n_params());
        let rng = rng::stream(cfg.seed, rng::streams::TRAINER);
        let data_sha256 = hash_data(&data);
        let stream = DataStream::new(data, cfg.seed)?;
        Ok(Trainer {
            cfg,
            model_cfg,
            models,
            opt_energy,
            opt_generator,
            opt_stats,
            iteration: 0,
            prior,
            rng,
            stream,
            data_sha256,
        })
    }

    /// Rebuilds a trainer mid-run. The data must be the exact array the
    /// checkpointed run saw; dimensions and content hash are verified.
    pub fn resume(ckpt: Checkpoint, data: Array2<f32>) -> Result<Self> {
        ckpt.config.validate()?;
        if data.nrows() as u64 != ckpt.data_rows || data.ncols() as u64 != ckpt.data_cols {
            return Err(MegError::config(format!(
                "checkpoint was trained on {}x{} data, got {}x{}",
                ckpt.data_rows,
                ckpt.data_cols,
                data.nrows(),
                data.ncols()
            )));
        }
        if hash_data(&data) != ckpt.data_sha256 {
            return Err(MegError::Integrity(
                "resume data does not match the checkpointed dataset hash".to_string(),
            ));
        }
        if ckpt.generator.input_dim() != ckpt.config.latent_dim {
            return Err(MegError::config(format!(
                "checkpoint latent_dim mismatch: generator expects k={}, config says k={}",
                ckpt.generator.input_dim(),
                ckpt.config.latent_dim
            )));
        }
        let prior = LatentPrior::new(ckpt.config.latent_dim)?;
        let stream = DataStream::restore(data, ckpt.config.seed, ckpt.stream_state)?;
        let rng = rng::restore_state(&ckpt.rng_state);
        let stats_latent = ckpt.config.latent_dim;
        let stats_sample = ckpt.stats.input_dim() - stats_latent;
        Ok(Trainer {
            models: Models {
                energy: EnergyFunction { net: ckpt.energy },
                generator: Generator { net: ckpt.generator },
                stats: StatisticsNetwork::from_parts(ckpt.stats, stats_sample, stats_latent)?,
            },
            opt_energy: ckpt.opt_energy,
            opt_generator: ckpt.opt_generator,
            opt_stats: ckpt.opt_stats,
            iteration: ckpt.iteration,
            prior,
            rng,
            stream,
            data_sha256: ckpt.data_sha256,
            cfg: ckpt.config,
            model_cfg: ckpt.model_config,
        })
    }

    fn adam_hp(&self) -> AdamHyperParams {
        AdamHyperParams {
            alpha: self.cfg.learning_rate,
            beta1: self.cfg.adam_beta1,
            beta2: self.cfg.adam_beta2,
            epsilon: self.cfg.adam_epsilon,
        }
    }

    /// One full iteration: `energy_steps` energy updates (fresh real and
    /// latent minibatches each), then the shuffle and the joint
    /// generator/statistics phase. Returns a breakdown whose loss fields
    /// satisfy both decomposition identities on its own entries.
    pub fn train_iteration(&mut self) -> Result<LossBreakdown> {
        let hp = self.adam_hp();
        let m = self.cfg.batch_size;
        let lambda = self.cfg.penalty_coeff;

        let mut energy_bd = LossBreakdown::default();
        for _ in 0..self.cfg.energy_steps {
            let x_real = self.stream.next_batch(m)?;
            let z = self.prior.sample::<f32, _>(m, &mut self.rng)?;
            let x_fake = self.models.generator.generate(&z)?;
            let (bd, grads) =
                energy_loss_with_grads(&self.models.energy, &x_real, &x_fake, lambda)?;
            adam_step(&mut self.models.energy.net, &grads, &mut self.opt_energy, &hp)?;
            energy_bd = bd;
        }

        let z = self.prior.sample::<f32, _>(m, &mut self.rng)?;
        let z_marg = shuffle_marginals(&z, &mut self.rng)?;
        let (gen_bd, grads_g, grads_t) = generator_statistics_grads(
            &self.models.energy,
            &self.models.stats,
            &self.models.generator,
            &z,
            &z_marg,
            self.cfg.mi_variant,
        )?;
        adam_step(&mut self.models.generator.net, &grads_g, &mut self.opt_generator, &hp)?;
        adam_step(&mut self.models.stats.net, &grads_t, &mut self.opt_stats, &hp)?;

        self.iteration += 1;
        Ok(LossBreakdown {
            energy_real: energy_bd.energy_real,
            energy_fake: gen_bd.energy_fake,
            penalty: energy_bd.penalty,
            mi_estimate: gen_bd.mi_estimate,
            loss_e: energy_bd.energy_real - gen_bd.energy_fake + lambda * energy_bd.penalty,
            loss_g: gen_bd.loss_g,
            loss_t: gen_bd.loss_t,
        })
    }

    pub fn epochs_completed(&self) -> u64 {
        self.stream.epochs_completed()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: FORMAT_VERSION,
            config: self.cfg.clone(),
            model_config: self.model_cfg.clone(),
            iteration: self.iteration,
            energy: self.models.energy.net.clone(),
            generator: self.models.generator.net.clone(),
            stats: self.models.stats.net.clone(),
            opt_energy: self.opt_energy.clone(),
            opt_generator: self.opt_generator.clone(),
            opt_stats: self.opt_stats.clone(),
            rng_state: rng::save_state(&self.rng),
            stream_state: self.stream.state(),
            data_rows: self.stream.data().nrows() as u64,
            data_cols: self.stream.data().ncols() as u64,
            data_sha256: self.data_sha256,
        }
    }
}

/// Appends one spec-format metrics row per iteration.
pub struct MetricsWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl MetricsWriter {
    pub const COLUMNS: &'static str =
        "step,loss_E,loss_G,loss_T,energy_real,energy_fake,penalty,mi_estimate";

    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", Self::COLUMNS)?;
        Ok(MetricsWriter { out, path: path.to_path_buf() })
    }

    pub fn append(path: &Path) -> Result<Self> {
        let out = BufWriter::new(File::options().append(true).open(path)?);
        Ok(MetricsWriter { out, path: path.to_path_buf() })
    }

    pub fn write(&mut self, step: u64, bd: &LossBreakdown) -> Result<()> {
        writeln!(
            self.out,
            "{step},{},{},{},{},{},{},{}",
            bd.loss_e, bd.loss_g, bd.loss_t, bd.energy_real, bd.energy_fake, bd.penalty,
            bd.mi_estimate
        )?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Runs `total_iters` iterations (or the remainder when resuming), writing
/// metrics every iteration and checkpoints at the configured cadence plus at
/// termination.
pub fn run_training(
    trainer: &mut Trainer,
    out_dir: &Path,
    mut eval_hook: Option<EvalHook<'_>>,
) -> Result<RunArtifacts> {
    std::fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join("metrics.csv");
    let resuming = trainer.iteration > 0 && metrics_path.exists();
    let mut metrics = if resuming {
        MetricsWriter::append(&metrics_path)?
    } else {
        MetricsWriter::create(&metrics_path)?
    };

    let mut eval_writer: Option<BufWriter<File>> = None;
    let eval_path = out_dir.join("eval.csv");
    let mut checkpoint_paths = Vec::new();

    let write_ckpt = |trainer: &Trainer, paths: &mut Vec<PathBuf>| -> Result<PathBuf> {
        let path = out_dir.join(format!("checkpoint-{:08}.ckpt", trainer.iteration));
        trainer.checkpoint().save(&path)?;
        paths.push(path.clone());
        Ok(path)
    };

    if trainer.iteration == 0 {
        write_ckpt(trainer, &mut checkpoint_paths)?;
    }

    while trainer.iteration < trainer.cfg.total_iters {
        let bd = trainer.train_iteration()?;
        metrics.write(trainer.iteration, &bd)?;

        if trainer.cfg.checkpoint_every > 0
            && trainer.iteration % trainer.cfg.checkpoint_every == 0
            && trainer.iteration < trainer.cfg.total_iters
        {
            metrics.flush()?;
            write_ckpt(trainer, &mut checkpoint_paths)?;
        }

        if trainer.cfg.eval_every > 0 && trainer.iteration % trainer.cfg.eval_every == 0 {
            if let Some(hook) = eval_hook.as_mut() {
                let rows = hook(&trainer.models, trainer.iteration);
                if !rows.is_empty() {
                    let writer = match eval_writer.as_mut() {
                        Some(w) => w,
                        None => {
                            let mut w = BufWriter::new(File::create(&eval_path)?);
                            writeln!(w, "step,metric,value")?;
                            eval_writer = Some(w);
                            eval_writer.as_mut().unwrap()
                        }
                    };
                    for (name, value) in rows {
                        writeln!(writer, "{},{name},{value}", trainer.iteration)?;
                    }
                }
            }
        }
    }

    metrics.flush()?;
    if let Some(w) = eval_writer.as_mut() {
        w.flush()?;
    }
    let final_path = out_dir.join("checkpoint-final.ckpt");
    trainer.checkpoint().save(&final_path)?;
    checkpoint_paths.push(final_path.clone());

    Ok(RunArtifacts {
        metrics_path,
        checkpoint_paths,
        final_checkpoint: final_path,
        eval_path: eval_writer.map(|_| eval_path),
    })
}
