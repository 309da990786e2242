//! Latent-space vs visible-space MCMC quality on a trained model, as a
//! reproducible harness: matched initializations (the visible chain starts at
//! `G(z0)` where the latent chain starts at `z0`), identical chain lengths,
//! per-space acceptance and energy bookkeeping, and an in-mode fraction for
//! 2D synthetic layouts.

use serde::{Deserialize, Serialize};

use crate::error::{MegError, Result};
use crate::modes::nearest_mode_assign;
use crate::nn::{EnergyFunction, Generator, LatentBatch};
use crate::rng::RngStream;
use crate::sampler::{run_latent_mala, run_visible_mala, MalaConfig, SampleSpace};
use crate::scalar::Scalar;

/// Mode geometry for the 2D in-mode metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeGeometry {
    pub centers: Vec<[f64; 2]>,
    pub sigma: f64,
    pub cutoff: f64,
}

/// Per-space quality summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainQualityReport {
    pub space: SampleSpace,
    pub acceptance_rate: f64,
    pub mean_final_energy: f64,
    /// Fraction of kept data-space samples within the mode cutoff (2D only).
    pub in_mode_fraction: Option<f64>,
    pub kept_samples: usize,
    pub chains: usize,
}

fn mean<F: Scalar>(values: &ndarray::Array1<F>) -> f64 {
    values.iter().map(|&v| v.to_f64()).sum::<f64>() / values.len() as f64
}

fn in_mode_fraction<F: Scalar>(
    samples: &ndarray::Array2<F>,
    geometry: &ModeGeometry,
) -> Result<f64> {
    let as_f32 = samples.mapv(|v| v.to_f64() as f32);
    Ok(nearest_mode_assign(&as_f32, &geometry.centers, geometry.sigma, geometry.cutoff)?
        .in_mode_fraction())
}

/// Both reports plus the data-space samples behind them, for rendering
/// start/end grids.
pub struct ComparisonOutcome<F: Scalar> {
    pub latent: ChainQualityReport,
    pub visible: ChainQualityReport,
    /// `G(z0)`: the shared starting samples of both chains.
    pub start_samples: ndarray::Array2<F>,
    pub latent_samples: ndarray::Array2<F>,
    pub visible_samples: ndarray::Array2<F>,
}

/// Runs one latent and one visible chain set from matched initial points and
/// reports both. The two runs share chain length and burn-in; only the
/// sampling space (and its step size) differs.
pub fn compare_chains<F: Scalar>(
    energy: &EnergyFunction<F>,
    generator: &Generator<F>,
    cfg_latent: &MalaConfig,
    cfg_visible: &MalaConfig,
    z0: &LatentBatch<F>,
    geometry: Option<&ModeGeometry>,
    rng_latent: &mut RngStream,
    rng_visible: &mut RngStream,
) -> Result<ComparisonOutcome<F>> {
    if cfg_latent.chain_length != cfg_visible.chain_length
        || cfg_latent.burn_in != cfg_visible.burn_in
    {
        return Err(MegError::config(
            "chain comparison requires matched chain_length and burn_in",
        ));
    }

    let (latent_run, latent_samples) = run_latent_mala(energy, generator, z0, cfg_latent, rng_latent)?;
    let latent_report = ChainQualityReport {
        space: SampleSpace::Latent,
        acceptance_rate: latent_run.acceptance_rate,
        mean_final_energy: {
            // Energy of the generated points at the final latent positions.
            let x = generator.generate(&LatentBatch::new(latent_run.final_positions.clone())?)?;
            mean(&energy.energy(&x)?)
        },
        in_mode_fraction: geometry
            .map(|g| in_mode_fraction(latent_samples.values(), g))
            .transpose()?,
        kept_samples: latent_samples.len(),
        chains: z0.len(),
    };

    let x0 = generator.generate(z0)?;
    let visible_run = run_visible_mala(energy, &x0, cfg_visible, rng_visible)?;
    let visible_kept = visible_run.kept_stacked();
    let visible_report = ChainQualityReport {
        space: SampleSpace::Visible,
        acceptance_rate: visible_run.acceptance_rate,
        mean_final_energy: mean(&visible_run.final_energies),
        in_mode_fraction: geometry.map(|g| in_mode_fraction(&visible_kept, g)).transpose()?,
        kept_samples: visible_kept.nrows(),
        chains: x0.len(),
    };

    Ok(ComparisonOutcome {
        latent: latent_report,
        visible: visible_report,
        start_samples: x0.into_values(),
        latent_samples: latent_samples.into_values(),
        visible_samples: visible_kept,
    })
}

/// One-sided sign test over paired per-chain comparisons: p-value for the
/// null that latent wins with probability <= 1/2, counting ties as losses.
pub fn sign_test_p_value(latent_wins: usize, trials: usize) -> f64 {
    // P(X >= wins) for X ~ Binomial(trials, 1/2), exact summation.
    let mut log_terms = Vec::with_capacity(trials + 1);
    for k in latent_wins..=trials {
        let mut log_c = 0.0f64;
        for i in 0..k.min(trials - k) {
            log_c += ((trials - i) as f64).ln() - ((i + 1) as f64).ln();
        }
        log_terms.push(log_c - (trials as f64) * std::f64::consts::LN_2);
    }
    let max = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return 0.0;
    }
    let sum: f64 = log_terms.iter().map(|&t| (t - max).exp()).sum();
    (max + sum.ln()).exp().min(1.0)
}
