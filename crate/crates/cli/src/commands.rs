//! Command implementations behind the CLI surface.

use std::fs;
use std::path::{Path, PathBuf};

use meg_core::anomaly::{auprc, evaluate_prf1_at_rate, score_samples};
use meg_core::comparison::{compare_chains, ModeGeometry};
use meg_core::config::RunConfig;
use meg_core::data::{save_archive, synthetic2d, ArrayArchive};
use meg_core::density::{density_grid, estimate_partition_importance, PartitionEstimator};
use meg_core::error::{MegError, Result};
use meg_core::manifest::RunManifest;
use meg_core::modes::{
    empirical_kl, mode_histogram, nearest_mode_assign, EmpiricalKl, ModeHistogram,
    StackedTemplateClassifier,
};
use meg_core::nn::{EnergyFunction, Generator, LatentPrior, SampleBatch, StatisticsNetwork};
use meg_core::rng;
use meg_core::sampler::{run_latent_mala, run_visible_mala, MalaConfig, SampleSpace};
use meg_core::trainer::{run_training, Checkpoint, Models, Trainer};
use meg_core::verify;

use crate::dataset::{materialize, RunDataset};

/// A run directory plus its manifest under construction.
pub struct RunContext {
    pub dir: PathBuf,
    manifest: RunManifest,
}

impl RunContext {
    pub fn create(out_root: &Path, name: &str, command: &str, cfg: &RunConfig) -> Result<Self> {
        let stamp = meg_core::manifest::now_unix();
        let mut dir = out_root.join(format!("{name}-{command}-{stamp}"));
        let mut suffix = 0u32;
        while dir.exists() {
            suffix += 1;
            dir = out_root.join(format!("{name}-{command}-{stamp}-{suffix}"));
        }
        fs::create_dir_all(&dir)?;
        let manifest = RunManifest::new(name, command, cfg.training.seed, cfg.to_toml());
        fs::write(dir.join("config.toml"), cfg.to_toml())?;
        Ok(RunContext { dir, manifest })
    }

    pub fn record(&mut self, path: &Path) -> Result<()> {
        self.manifest.record(path)
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        let config_path = self.dir.join("config.toml");
        self.manifest.record(&config_path)?;
        let dir = self.dir.clone();
        self.manifest.finish_and_write(&dir)?;
        Ok(dir)
    }

    pub fn mark_failed(dir: &Path, err: &MegError) {
        let _ = fs::write(dir.join("FAILED"), format!("{err}\n"));
    }
}

/// Rebuilds the models stored in a checkpoint.
pub fn models_from_checkpoint(ckpt: &Checkpoint) -> Result<Models> {
    let latent_dim = ckpt.config.latent_dim;
    let sample_dim = ckpt.stats.input_dim() - latent_dim;
    Ok(Models {
        energy: EnergyFunction { net: ckpt.energy.clone() },
        generator: Generator { net: ckpt.generator.clone() },
        stats: StatisticsNetwork::from_parts(ckpt.stats.clone(), sample_dim, latent_dim)?,
    })
}

/// Checks an evaluation config against the checkpoint it will run on.
fn check_compatibility(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<()> {
    if cfg.training.latent_dim != ckpt.config.latent_dim {
        return Err(MegError::config(format!(
            "latent dimension mismatch: config declares k={}, checkpoint was trained with k={}",
            cfg.training.latent_dim, ckpt.config.latent_dim
        )));
    }
    Ok(())
}

pub fn cmd_train(
    cfg: &RunConfig,
    out_root: &Path,
    resume: Option<&Path>,
) -> Result<PathBuf> {
    let dataset = materialize(cfg)?;
    let train_data = dataset.train_matrix().clone();

    let (mut trainer, ctx_dir) = match resume {
        Some(ckpt_path) => {
            let ckpt = Checkpoint::load(ckpt_path)?;
            let trainer = Trainer::resume(ckpt, train_data)?;
            // Continue in the directory holding the checkpoint so metrics
            // append onto the original stream.
            let dir = ckpt_path
                .parent()
                .ok_or_else(|| MegError::config("checkpoint path has no parent directory"))?
                .to_path_buf();
            (trainer, Some(dir))
        }
        None => {
            let trainer_cfg = cfg.training.clone();
            trainer_cfg.validate()?;
            (Trainer::new(trainer_cfg, cfg.model.clone(), train_data)?, None)
        }
    };

    let mut ctx = match ctx_dir {
        Some(dir) => RunContext {
            dir,
            manifest: RunManifest::new(&cfg.name, "train-resume", cfg.training.seed, cfg.to_toml()),
        },
        None => RunContext::create(out_root, &cfg.name, "train", cfg)?,
    };

    // Rolling anomaly evaluation on datasets that carry a labeled test set.
    let contamination = cfg.anomaly.contamination;
    let eval_ctx = dataset.anomaly_eval().map(|(test, labels)| {
        (SampleBatch::new(test.clone()).expect("test matrix is finite"), labels.to_vec())
    });
    let mut hook = eval_ctx.map(|(test, labels)| {
        move |models: &Models, _iter: u64| -> Vec<(String, f64)> {
            let mut rows = Vec::new();
            if let Ok(scores) = score_samples(&models.energy, &test, Some(&labels)) {
                if let Ok(a) = auprc(&scores) {
                    rows.push(("auprc".to_string(), a));
                }
                if let Ok(r) = evaluate_prf1_at_rate(&scores, contamination) {
                    rows.push(("precision".to_string(), r.precision));
                    rows.push(("recall".to_string(), r.recall));
                    rows.push(("f1".to_string(), r.f1));
                }
            }
            rows
        }
    });
    let hook_ref: Option<meg_core::trainer::EvalHook<'_>> = match hook.as_mut() {
        Some(h) => Some(h),
        None => None,
    };

    let result = run_training(&mut trainer, &ctx.dir, hook_ref);
    let artifacts = match result {
        Ok(a) => a,
        Err(e) => {
            RunContext::mark_failed(&ctx.dir, &e);
            return Err(e);
        }
    };

    ctx.record(&artifacts.metrics_path)?;
    for p in &artifacts.checkpoint_paths {
        ctx.record(p)?;
    }
    if let Some(eval) = &artifacts.eval_path {
        ctx.record(eval)?;
    }
    let final_bd = format!(
        "trained {} iterations over {} epochs; final checkpoint {}",
        trainer.iteration,
        trainer.epochs_completed(),
        artifacts.final_checkpoint.display()
    );
    println!("{final_bd}");
    ctx.finish()
}

pub struct SampleArgs {
    pub count: usize,
    pub compare: bool,
}

pub fn cmd_sample(
    cfg: &RunConfig,
    ckpt: &Checkpoint,
    args: &SampleArgs,
    out_root: &Path,
) -> Result<PathBuf> {
    check_compatibility(cfg, ckpt)?;
    let models = models_from_checkpoint(ckpt)?;
    let mut ctx = RunContext::create(out_root, &cfg.name, "sample", cfg)?;
    let result = sample_into(cfg, &models, args, &mut ctx);
    match result {
        Ok(()) => ctx.finish(),
        Err(e) => {
            RunContext::mark_failed(&ctx.dir, &e);
            Err(e)
        }
    }
}

/// Channel-stacked image layout of one sample row, when the dataset is
/// image-shaped: (stacks, height, width).
fn image_layout(cfg: &RunConfig, sample_dim: usize) -> Option<(usize, usize, usize)> {
    match cfg.data.dataset.as_str() {
        "stackedmnist" => {
            let (h, w) = (cfg.data.digit_shape[0], cfg.data.digit_shape[1]);
            (cfg.data.stacks * h * w == sample_dim).then_some((cfg.data.stacks, h, w))
        }
        "mnist-heldout" => {
            let side = (sample_dim as f64).sqrt() as usize;
            (side * side == sample_dim).then_some((1, side, side))
        }
        _ => None,
    }
}

/// Tiles up to 64 samples into one grayscale PNG, channels side by side.
fn save_sample_grid(
    samples: &ndarray::Array2<f32>,
    layout: (usize, usize, usize),
    path: &Path,
) -> Result<()> {
    let (stacks, h, w) = layout;
    let n = samples.nrows().min(64);
    let tiles_per_row = 8usize.min(n.max(1));
    let rows = n.div_ceil(tiles_per_row);
    let tile_w = stacks * w + 2;
    let tile_h = h + 2;
    let mut img = image::GrayImage::new(
        (tiles_per_row * tile_w) as u32,
        (rows * tile_h) as u32,
    );
    for i in 0..n {
        let (ty, tx) = (i / tiles_per_row, i % tiles_per_row);
        for c in 0..stacks {
            for y in 0..h {
                for x in 0..w {
                    let v = samples[[i, c * h * w + y * w + x]].clamp(0.0, 1.0);
                    let px = (tx * tile_w + c * w + x + 1) as u32;
                    let py = (ty * tile_h + y + 1) as u32;
                    img.put_pixel(px, py, image::Luma([(v * 255.0) as u8]));
                }
            }
        }
    }
    img.save(path).map_err(|e| MegError::config(format!("cannot write sample grid: {e}")))?;
    Ok(())
}

fn toy_geometry(cfg: &RunConfig) -> Option<ModeGeometry> {
    use meg_core::data::{Synthetic2DSpec, ToyFamily};
    let family = ToyFamily::parse(&cfg.data.dataset)?;
    let mut spec = Synthetic2DSpec::standard(family);
    if let Some(sigma) = cfg.data.sigma {
        spec.sigma = sigma;
    }
    let centers = spec.centers();
    if centers.is_empty() {
        return None;
    }
    Some(ModeGeometry { centers, sigma: spec.sigma, cutoff: cfg.modes.cutoff })
}

fn sample_into(
    cfg: &RunConfig,
    models: &Models,
    args: &SampleArgs,
    ctx: &mut RunContext,
) -> Result<()> {
    let mala = cfg.sampler;
    mala.validate()?;
    let prior = LatentPrior::new(models.generator.latent_dim())?;
    let mut init_rng = rng::stream(cfg.training.seed, rng::streams::EVAL);
    let z0 = prior.sample::<f32, _>(args.count, &mut init_rng)?;

    if args.compare {
        let geometry = toy_geometry(cfg);
        let mut rng_latent = rng::stream(cfg.training.seed, rng::streams::CHAIN_BASE);
        let mut rng_visible = rng::stream(cfg.training.seed, rng::streams::CHAIN_BASE + 1);
        let outcome = compare_chains(
            &models.energy,
            &models.generator,
            &mala,
            &MalaConfig { space: SampleSpace::Visible, ..mala },
            &z0,
            geometry.as_ref(),
            &mut rng_latent,
            &mut rng_visible,
        )?;
        let report = serde_json::json!({
            "latent": outcome.latent,
            "visible": outcome.visible,
            "chains": args.count,
            "chain_length": mala.chain_length,
            "burn_in": mala.burn_in,
            "step_size": mala.step_size,
        });
        let path = ctx.dir.join("comparison.json");
        fs::write(&path, serde_json::to_string_pretty(&report).expect("report serializes"))?;
        ctx.record(&path)?;
        for (name, data) in [
            ("start-samples", &outcome.start_samples),
            ("latent-samples", &outcome.latent_samples),
            ("visible-samples", &outcome.visible_samples),
        ] {
            save_archive(
                &ctx.dir,
                name,
                &ArrayArchive::F32 { data: data.clone(), labels: None },
                serde_json::json!({"role": name}),
                cfg.training.seed,
            )?;
            ctx.record(&ctx.dir.join(format!("{name}.bin")).clone())?;
            ctx.record(&ctx.dir.join(format!("{name}.json")).clone())?;
            if let Some(layout) = image_layout(cfg, data.ncols()) {
                let png = ctx.dir.join(format!("{name}.png"));
                save_sample_grid(data, layout, &png)?;
                ctx.record(&png)?;
            }
        }
        println!(
            "latent: acceptance {:.3}, mean final energy {:.4}{}",
            outcome.latent.acceptance_rate,
            outcome.latent.mean_final_energy,
            outcome
                .latent
                .in_mode_fraction
                .map(|f| format!(", in-mode {f:.3}"))
                .unwrap_or_default()
        );
        println!(
            "visible: acceptance {:.3}, mean final energy {:.4}{}",
            outcome.visible.acceptance_rate,
            outcome.visible.mean_final_energy,
            outcome
                .visible
                .in_mode_fraction
                .map(|f| format!(", in-mode {f:.3}"))
                .unwrap_or_default()
        );
        return Ok(());
    }

    let mut chain_rng = rng::stream(cfg.training.seed, rng::streams::CHAIN_BASE);
    let (run, samples) = match mala.space {
        SampleSpace::Latent => {
            run_latent_mala(&models.energy, &models.generator, &z0, &mala, &mut chain_rng)?
        }
        SampleSpace::Visible => {
            let x0 = models.generator.generate(&z0)?;
            let run = run_visible_mala(&models.energy, &x0, &mala, &mut chain_rng)?;
            let stacked = run.kept_stacked();
            (run, SampleBatch::new(stacked)?)
        }
    };
    if let Some(warning) = &run.warning {
        eprintln!("warning: {warning}");
    }
    save_archive(
        &ctx.dir,
        "samples",
        &ArrayArchive::F32 { data: samples.values().clone(), labels: None },
        serde_json::json!({
            "space": match mala.space { SampleSpace::Latent => "latent", SampleSpace::Visible => "visible" },
            "chains": args.count,
            "chain_length": mala.chain_length,
            "burn_in": mala.burn_in,
        }),
        cfg.training.seed,
    )?;
    ctx.record(&ctx.dir.join("samples.bin").clone())?;
    ctx.record(&ctx.dir.join("samples.json").clone())?;
    if let Some(layout) = image_layout(cfg, samples.dim()) {
        let png = ctx.dir.join("samples.png");
        save_sample_grid(samples.values(), layout, &png)?;
        ctx.record(&png)?;
    }
    let summary = format!(
        "kept {} samples from {} chains; acceptance rate {:.4}",
        samples.len(),
        args.count,
        run.acceptance_rate
    );
    println!("{summary}");
    fs::write(ctx.dir.join("acceptance.txt"), format!("{summary}\n"))?;
    ctx.record(&ctx.dir.join("acceptance.txt").clone())?;
    Ok(())
}

pub fn cmd_eval_density(cfg: &RunConfig, ckpt: &Checkpoint, out_root: &Path) -> Result<PathBuf> {
    check_compatibility(cfg, ckpt)?;
    let models = models_from_checkpoint(ckpt)?;
    let mut ctx = RunContext::create(out_root, &cfg.name, "eval-density", cfg)?;
    let result = (|| -> Result<()> {
        let resolution = (cfg.density.resolution[0], cfg.density.resolution[1]);
        let grid = density_grid(&models.energy, cfg.density.bounds, resolution)?;
        let csv_path = ctx.dir.join("density.csv");
        fs::write(&csv_path, grid.to_csv())?;
        ctx.record(&csv_path)?;

        let mut metadata: serde_json::Value =
            serde_json::from_str(&grid.metadata_json()).expect("metadata is JSON");
        if cfg.density.estimator == PartitionEstimator::ImportanceKde {
            let mut rng = rng::stream(cfg.training.seed, rng::streams::EVAL);
            let log_z_is = estimate_partition_importance(
                &models.energy,
                &models.generator,
                cfg.density.importance_samples,
                cfg.density.importance_bandwidth,
                &mut rng,
            )?;
            metadata["log_partition_importance"] = serde_json::json!(log_z_is);
        }
        let meta_path = ctx.dir.join("density.json");
        fs::write(&meta_path, serde_json::to_string_pretty(&metadata).expect("serializes"))?;
        ctx.record(&meta_path)?;

        let png_path = ctx.dir.join("density.png");
        grid.save_heatmap_png(&png_path)?;
        ctx.record(&png_path)?;
        println!("log Z = {:.6} over {:?} at {:?}", grid.log_partition, cfg.density.bounds, resolution);
        Ok(())
    })();
    match result {
        Ok(()) => ctx.finish(),
        Err(e) => {
            RunContext::mark_failed(&ctx.dir, &e);
            Err(e)
        }
    }
}

pub fn cmd_eval_modes(cfg: &RunConfig, ckpt: &Checkpoint, out_root: &Path) -> Result<PathBuf> {
    check_compatibility(cfg, ckpt)?;
    let models = models_from_checkpoint(ckpt)?;
    let mut ctx = RunContext::create(out_root, &cfg.name, "eval-modes", cfg)?;
    let result = (|| -> Result<()> {
        let n = cfg.modes.eval_samples;
        let prior = LatentPrior::new(models.generator.latent_dim())?;
        let mut rng = rng::stream(cfg.training.seed, rng::streams::EVAL);
        let z = prior.sample::<f32, _>(n, &mut rng)?;
        let generated = models.generator.generate(&z)?;

        let report = match materialize(cfg)? {
            RunDataset::Toy { spec, .. } => {
                let centers = spec.centers();
                if centers.is_empty() {
                    return Err(MegError::config(
                        "mode evaluation needs a dataset with discrete modes",
                    ));
                }
                let assign =
                    nearest_mode_assign(generated.values(), &centers, spec.sigma, cfg.modes.cutoff)?;
                let mut gen_hist = ModeHistogram::new(centers.len());
                for (id, &ok) in assign.mode_ids.iter().zip(&assign.in_mode) {
                    if ok {
                        gen_hist.record(*id)?;
                    }
                }
                // Empirical reference from an equally sized draw of the true
                // mixture.
                let reference = synthetic2d::<f32, _>(&spec, n, &mut rng)?;
                let ref_assign =
                    nearest_mode_assign(reference.values(), &centers, spec.sigma, cfg.modes.cutoff)?;
                let mut ref_hist = ModeHistogram::new(centers.len());
                for &id in &ref_assign.mode_ids {
                    ref_hist.record(id)?;
                }
                let kl = empirical_kl(&gen_hist, &ref_hist)?;
                mode_report(&gen_hist, kl, Some(assign.in_mode_fraction()), n)
            }
            RunDataset::Stacked { spec, eval_modes, templates, .. } => {
                let classifier = StackedTemplateClassifier::new(templates, spec.stacks)?;
                let gen_hist = mode_histogram(&classifier, &generated, spec.mode_capacity())?;
                let mut ref_hist = ModeHistogram::new(spec.mode_capacity());
                for &m in &eval_modes {
                    ref_hist.record(m as usize)?;
                }
                let kl = empirical_kl(&gen_hist, &ref_hist)?;
                mode_report(&gen_hist, kl, None, n)
            }
            _ => {
                return Err(MegError::config(
                    "mode evaluation is defined for the toy 2D and stacked-digit datasets",
                ))
            }
        };

        let path = ctx.dir.join("modes.json");
        fs::write(&path, serde_json::to_string_pretty(&report).expect("serializes"))?;
        ctx.record(&path)?;
        println!(
            "captured {} of {} modes; KL = {}",
            report["captured_modes"], report["mode_capacity"], report["kl_nats"]
        );
        Ok(())
    })();
    match result {
        Ok(()) => ctx.finish(),
        Err(e) => {
            RunContext::mark_failed(&ctx.dir, &e);
            Err(e)
        }
    }
}

fn mode_report(
    hist: &ModeHistogram,
    kl: EmpiricalKl,
    in_mode_fraction: Option<f64>,
    samples: usize,
) -> serde_json::Value {
    let mut report = serde_json::json!({
        "captured_modes": hist.captured_modes(),
        "mode_capacity": hist.capacity(),
        "sample_count": samples,
        "kl_nats": match kl {
            EmpiricalKl::Finite(v) => serde_json::json!(v),
            EmpiricalKl::Infinite { first_offending_mode } => serde_json::json!({
                "infinite": true,
                "first_offending_mode": first_offending_mode,
            }),
        },
    });
    if let Some(f) = in_mode_fraction {
        report["in_mode_fraction"] = serde_json::json!(f);
    }
    if hist.capacity() <= 1000 {
        report["per_mode_counts"] = serde_json::json!(hist.counts());
    }
    report
}

pub fn cmd_eval_anomaly(cfg: &RunConfig, ckpt: &Checkpoint, out_root: &Path) -> Result<PathBuf> {
    check_compatibility(cfg, ckpt)?;
    let models = models_from_checkpoint(ckpt)?;
    let mut ctx = RunContext::create(out_root, &cfg.name, "eval-anomaly", cfg)?;
    let result = (|| -> Result<()> {
        let dataset = materialize(cfg)?;
        let (test, labels) = dataset.anomaly_eval().ok_or_else(|| {
            MegError::config("anomaly evaluation needs a dataset with a labeled test set")
        })?;
        let batch = SampleBatch::new(test.clone())?;
        let scores = score_samples(&models.energy, &batch, Some(labels))?;
        let prf1 = evaluate_prf1_at_rate(&scores, cfg.anomaly.contamination)?;
        let area = auprc(&scores)?;
        let report = serde_json::json!({
            "precision": prf1.precision,
            "recall": prf1.recall,
            "f1": prf1.f1,
            "threshold": prf1.threshold,
            "contamination": prf1.contamination_rate,
            "auprc": area,
            "test_samples": scores.scores.len(),
            "excluded_nonfinite": scores.excluded_nonfinite,
            "checkpoint_iteration": ckpt.iteration,
        });
        let path = ctx.dir.join("anomaly.json");
        fs::write(&path, serde_json::to_string_pretty(&report).expect("serializes"))?;
        ctx.record(&path)?;
        println!(
            "precision {:.4}, recall {:.4}, F1 {:.4}, AUPRC {:.4}",
            prf1.precision, prf1.recall, prf1.f1, area
        );
        Ok(())
    })();
    match result {
        Ok(()) => ctx.finish(),
        Err(e) => {
            RunContext::mark_failed(&ctx.dir, &e);
            Err(e)
        }
    }
}

/// Exit status 3 when any suite fails.
pub fn cmd_check(seed: u64) -> Result<bool> {
    let results = verify::run_all(seed)?;
    let mut all_passed = true;
    for r in &results {
        println!("{}", r.print_line());
        all_passed &= r.passed;
    }
    println!(
        "{} of {} verification checks passed",
        results.iter().filter(|r| r.passed).count(),
        results.len()
    );
    Ok(all_passed)
}
