//! Interactive browser demo over the core crate: step the adversarial
//! training loop on a 2D toy dataset, render the learned density as RGBA
//! pixels, and pull MALA-refined samples out of the trained generator.
//!
//! Everything here is plain data in and out (flat `f32` buffers, JSON
//! strings), so the page needs no framework — one canvas and a few sliders.

use meg_core::config::RunConfig;
use meg_core::data::{synthetic2d, Synthetic2DSpec, ToyFamily};
use meg_core::density::{density_grid, GridBounds};
use meg_core::nn::LatentPrior;
use meg_core::rng;
use meg_core::sampler::{run_latent_mala, MalaConfig};
use meg_core::trainer::Trainer;
use wasm_bindgen::prelude::*;

fn js_err(e: String) -> JsValue {
    JsValue::from_str(&e)
}

fn core_err(e: meg_core::MegError) -> String {
    e.to_string()
}

/// One live training session on a toy dataset.
#[wasm_bindgen]
pub struct MegDemo {
    trainer: Trainer,
    spec: Synthetic2DSpec,
    last_acceptance: f64,
}

#[wasm_bindgen]
impl MegDemo {
    /// `dataset` is one of `8gaussians`, `25gaussians`, `swissroll`.
    #[wasm_bindgen(constructor)]
    pub fn new(dataset: &str, seed: u64, penalty_coeff: f64, hidden: usize) -> Result<MegDemo, JsValue> {
        MegDemo::build(dataset, seed, penalty_coeff, hidden).map_err(js_err)
    }

    /// Advances `n` iterations and returns the last loss breakdown as JSON.
    pub fn train_steps(&mut self, n: u32) -> Result<String, JsValue> {
        let mut last = None;
        for _ in 0..n {
            last = Some(self.trainer.train_iteration().map_err(core_err).map_err(js_err)?);
        }
        let bd = last.unwrap_or_default();
        Ok(serde_json::json!({
            "iteration": self.trainer.iteration,
            "loss_e": bd.loss_e,
            "loss_g": bd.loss_g,
            "loss_t": bd.loss_t,
            "energy_real": bd.energy_real,
            "energy_fake": bd.energy_fake,
            "penalty": bd.penalty,
            "mi_estimate": bd.mi_estimate,
        })
        .to_string())
    }

    pub fn iteration(&self) -> u32 {
        self.trainer.iteration as u32
    }

    /// RGBA pixels (`resolution x resolution x 4`, top row first) of the
    /// normalized density over `[-half_width, half_width]^2`.
    pub fn density_rgba(&self, resolution: usize, half_width: f64) -> Result<Vec<u8>, JsValue> {
        let grid = density_grid(
            &self.trainer.models.energy,
            GridBounds::square(half_width),
            (resolution, resolution),
        )
        .map_err(core_err).map_err(js_err)?;
        let (pixels, _, _) = grid.to_rgba();
        Ok(pixels)
    }

    /// `log Z` of the current energy over the rendered window.
    pub fn log_partition(&self, resolution: usize, half_width: f64) -> Result<f64, JsValue> {
        let grid = density_grid(
            &self.trainer.models.energy,
            GridBounds::square(half_width),
            (resolution, resolution),
        )
        .map_err(core_err).map_err(js_err)?;
        Ok(grid.log_partition)
    }

    /// `n` direct generator samples, flattened `[x0, y0, x1, y1, ...]`.
    pub fn generator_points(&self, n: usize, seed: u64) -> Result<Vec<f32>, JsValue> {
        self.generator_points_impl(n, seed).map_err(js_err)
    }

    /// `n` true dataset samples, flattened.
    pub fn data_points(&self, n: usize, seed: u64) -> Result<Vec<f32>, JsValue> {
        let mut rng = rng::stream(seed, rng::streams::EVAL + 1);
        let x = synthetic2d::<f32, _>(&self.spec, n.max(1), &mut rng)
            .map_err(core_err)
            .map_err(js_err)?;
        Ok(x.values().iter().copied().collect())
    }

    /// MALA-refined samples: runs `chains` latent chains for `chain_length`
    /// steps, keeps everything after `burn_in`, returns the generated points
    /// flattened. Acceptance rate is available via `mala_acceptance()`.
    pub fn mala_points(
        &mut self,
        chains: usize,
        chain_length: usize,
        burn_in: usize,
        step_size: f64,
        seed: u64,
    ) -> Result<Vec<f32>, JsValue> {
        self.mala_points_impl(chains, chain_length, burn_in, step_size, seed).map_err(js_err)
    }

    pub fn mala_acceptance(&self) -> f64 {
        self.last_acceptance
    }

    /// True mode centers of the current dataset, flattened (empty for the
    /// swiss roll).
    pub fn mode_centers(&self) -> Vec<f32> {
        self.spec
            .centers()
            .into_iter()
            .flat_map(|c| [c[0] as f32, c[1] as f32])
            .collect()
    }
}

impl MegDemo {
    fn build(dataset: &str, seed: u64, penalty_coeff: f64, hidden: usize) -> Result<MegDemo, String> {
        let family = ToyFamily::parse(dataset)
            .ok_or_else(|| "unknown dataset (8gaussians, 25gaussians, swissroll)".to_string())?;
        let spec = Synthetic2DSpec::standard(family);

        let mut cfg = RunConfig::default();
        cfg.training.seed = seed;
        cfg.training.penalty_coeff = penalty_coeff;
        cfg.training.batch_size = 128;
        cfg.training.total_iters = u64::MAX;
        let width = hidden.clamp(8, 256);
        for net in [&mut cfg.model.energy, &mut cfg.model.generator, &mut cfg.model.statistics] {
            net.hidden = vec![width, width];
        }

        let mut data_rng = rng::stream(seed, rng::streams::DATA_BUILD);
        let train = synthetic2d::<f32, _>(&spec, 50_000, &mut data_rng)
            .map_err(core_err)?
            .into_values();
        let trainer =
            Trainer::new(cfg.training.clone(), cfg.model.clone(), train).map_err(core_err)?;
        Ok(MegDemo { trainer, spec, last_acceptance: 0.0 })
    }

    fn generator_points_impl(&self, n: usize, seed: u64) -> Result<Vec<f32>, String> {
        let prior = LatentPrior::new(self.trainer.cfg.latent_dim).map_err(core_err)?;
        let mut rng = rng::stream(seed, rng::streams::EVAL);
        let z = prior.sample::<f32, _>(n.max(1), &mut rng).map_err(core_err)?;
        let x = self.trainer.models.generator.generate(&z).map_err(core_err)?;
        Ok(x.values().iter().copied().collect())
    }

    fn mala_points_impl(
        &mut self,
        chains: usize,
        chain_length: usize,
        burn_in: usize,
        step_size: f64,
        seed: u64,
    ) -> Result<Vec<f32>, String> {
        let cfg = MalaConfig { step_size, chain_length, burn_in, ..Default::default() };
        cfg.validate().map_err(core_err)?;
        let prior = LatentPrior::new(self.trainer.cfg.latent_dim).map_err(core_err)?;
        let mut rng = rng::stream(seed, rng::streams::CHAIN_BASE);
        let z0 = prior.sample::<f32, _>(chains.max(1), &mut rng).map_err(core_err)?;
        let (run, samples) = run_latent_mala(
            &self.trainer.models.energy,
            &self.trainer.models.generator,
            &z0,
            &cfg,
            &mut rng,
        )
        .map_err(core_err)?;
        self.last_acceptance = run.acceptance_rate;
        Ok(samples.values().iter().copied().collect())
    }
}
