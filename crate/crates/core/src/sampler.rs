//! Metropolis-adjusted Langevin sampling.
//!
//! The drift proposal is `z' = z - alpha * grad U(z) + sqrt(2 alpha) * eps`
//! with `eps ~ N(0, I)`; the Metropolis correction uses
//! `log q(z'|z) = -||z' - z + alpha * grad U(z)||^2 / (4 alpha)` up to a
//! constant that cancels in the ratio. The same machinery runs in the
//! generator's latent space (target `E(G(z))`, optionally plus the prior) or
//! directly in data space.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{MegError, Result};
use crate::nn::{grad_energy_latent, EnergyFunction, Generator, LatentBatch, SampleBatch};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Which space the chain walks in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SampleSpace {
    #[default]
    Latent,
    Visible,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MalaConfig {
    pub step_size: f64,
    pub chain_length: usize,
    pub burn_in: usize,
    pub space: SampleSpace,
    /// Adds the N(0, I) latent prior term to the target energy. Off by
    /// default: the published acceptance ratio uses the energy alone.
    pub include_prior: bool,
}

impl Default for MalaConfig {
    fn default() -> Self {
        MalaConfig {
            step_size: 0.01,
            chain_length: 200,
            burn_in: 100,
            space: SampleSpace::Latent,
            include_prior: false,
        }
    }
}

impl MalaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(MegError::config("mala: step_size must be > 0"));
        }
        if self.burn_in >= self.chain_length {
            return Err(MegError::config("mala: burn_in must be < chain_length"));
        }
        Ok(())
    }
}

/// Unnormalized negative log density with gradient, batch-evaluated.
pub trait MalaTarget<F: Scalar> {
    fn dim(&self) -> usize;
    fn energy(&self, positions: &Array2<F>) -> Result<Array1<F>>;
    fn grad(&self, positions: &Array2<F>) -> Result<Array2<F>>;
}

/// `U(z) = E(G(z))`, optionally `+ ||z||^2 / 2`.
pub struct LatentSpaceTarget<'a, F: Scalar> {
    pub energy: &'a EnergyFunction<F>,
    pub generator: &'a Generator<F>,
    pub include_prior: bool,
}

impl<F: Scalar> MalaTarget<F> for LatentSpaceTarget<'_, F> {
    fn dim(&self) -> usize {
        self.generator.latent_dim()
    }

    fn energy(&self, positions: &Array2<F>) -> Result<Array1<F>> {
        let z = LatentBatch::new(positions.clone())?;
        let x = self.generator.generate(&z)?;
        let mut e = self.energy.energy(&x)?;
        if self.include_prior {
            let half = F::from_f64(0.5);
            for (ei, row) in e.iter_mut().zip(positions.rows()) {
                let sq: F = row.iter().map(|&v| v * v).sum();
                *ei = *ei + half * sq;
            }
        }
        Ok(e)
    }

    fn grad(&self, positions: &Array2<F>) -> Result<Array2<F>> {
        let z = LatentBatch::new(positions.clone())?;
        let mut g = grad_energy_latent(self.energy, self.generator, &z)?;
        if self.include_prior {
            g = g + positions;
        }
        Ok(g)
    }
}

/// `U(x) = E(x)` directly in data space.
pub struct VisibleSpaceTarget<'a, F: Scalar> {
    pub energy: &'a EnergyFunction<F>,
}

impl<F: Scalar> MalaTarget<F> for VisibleSpaceTarget<'_, F> {
    fn dim(&self) -> usize {
        self.energy.input_dim()
    }

    fn energy(&self, positions: &Array2<F>) -> Result<Array1<F>> {
        self.energy.energy(&SampleBatch::new(positions.clone())?)
    }

    fn grad(&self, positions: &Array2<F>) -> Result<Array2<F>> {
        self.energy.grad_x(&SampleBatch::new(positions.clone())?)
    }
}

/// Analytic `U(z) = ||z||^2 / 2` (stationary law N(0, I)); the oracle target
/// for the correctness suites.
pub struct QuadraticTarget {
    pub dim: usize,
}

impl<F: Scalar> MalaTarget<F> for QuadraticTarget {
    fn dim(&self) -> usize {
        self.dim
    }

    fn energy(&self, positions: &Array2<F>) -> Result<Array1<F>> {
        Ok(positions
            .rows()
            .into_iter()
            .map(|r| {
                let sq: F = r.iter().map(|&v| v * v).sum();
                sq / F::from_f64(2.0)
            })
            .collect())
    }

    fn grad(&self, positions: &Array2<F>) -> Result<Array2<F>> {
        Ok(positions.clone())
    }
}

/// Flat target: pure random-walk proposals, unit acceptance.
pub struct ConstantTarget {
    pub dim: usize,
}

impl<F: Scalar> MalaTarget<F> for ConstantTarget {
    fn dim(&self) -> usize {
        self.dim
    }

    fn energy(&self, positions: &Array2<F>) -> Result<Array1<F>> {
        Ok(Array1::zeros(positions.nrows()))
    }

    fn grad(&self, positions: &Array2<F>) -> Result<Array2<F>> {
        Ok(Array2::zeros(positions.raw_dim()))
    }
}

/// `log q(to | from)` up to its additive constant.
fn log_proposal<F: Scalar>(
    to: &Array2<F>,
    from: &Array2<F>,
    grad_from: &Array2<F>,
    alpha: f64,
) -> Array1<f64> {
    let a = F::from_f64(alpha);
    let mut out = Array1::zeros(to.nrows());
    for i in 0..to.nrows() {
        let mut sq = 0.0f64;
        for j in 0..to.ncols() {
            let diff = (to[[i, j]] - from[[i, j]] + a * grad_from[[i, j]]).to_f64();
            sq += diff * diff;
        }
        out[i] = -sq / (4.0 * alpha);
    }
    out
}

/// `log r` for each (from, to) row pair, evaluating the target afresh on both
/// endpoints. Entirely in log space; `to == from` gives exactly 0.
pub fn log_accept_ratio<F: Scalar, T: MalaTarget<F>>(
    target: &T,
    from: &Array2<F>,
    to: &Array2<F>,
    alpha: f64,
) -> Result<Array1<f64>> {
    let e_from = target.energy(from)?;
    let e_to = target.energy(to)?;
    let g_from = target.grad(from)?;
    let g_to = target.grad(to)?;
    let fwd = log_proposal(to, from, &g_from, alpha);
    let bwd = log_proposal(from, to, &g_to, alpha);
    let mut out = Array1::zeros(from.nrows());
    for i in 0..from.nrows() {
        out[i] = e_from[i].to_f64() - e_to[i].to_f64() + bwd[i] - fwd[i];
    }
    Ok(out)
}

/// `min(1, r)` as a probability, without ever leaving log space on the
/// decision path.
pub fn accept_prob(log_r: f64) -> f64 {
    log_r.min(0.0).exp()
}

/// A batch of independent chains advancing in lockstep.
pub struct ChainSet<F: Scalar> {
    positions: Array2<F>,
    energies: Array1<F>,
    grads: Array2<F>,
    accepted: u64,
    proposed: u64,
    alpha: f64,
}

/// Bookkeeping view of one chain row.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState<F: Scalar> {
    pub position: Array1<F>,
    pub current_energy: F,
    pub accepted_count: u64,
    pub proposed_count: u64,
}

impl<F: Scalar> ChainSet<F> {
    pub fn new<T: MalaTarget<F>>(target: &T, init: Array2<F>, alpha: f64) -> Result<Self> {
        if init.ncols() != target.dim() {
            return Err(MegError::config(format!(
                "chain dimension {} does not match target dimension {}",
                init.ncols(),
                target.dim()
            )));
        }
        let energies = target.energy(&init)?;
        let grads = target.grad(&init)?;
        Ok(ChainSet { positions: init, energies, grads, accepted: 0, proposed: 0, alpha })
    }

    pub fn positions(&self) -> &Array2<F> {
        &self.positions
    }

    pub fn energies(&self) -> &Array1<F> {
        &self.energies
    }

    pub fn n_chains(&self) -> usize {
        self.positions.nrows()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// Aggregate counts over all chains: (accepted, proposed).
    pub fn counts(&self) -> (u64, u64) {
        (self.accepted, self.proposed)
    }

    pub fn state(&self, chain: usize) -> ChainState<F> {
        ChainState {
            position: self.positions.row(chain).to_owned(),
            current_energy: self.energies[chain],
            accepted_count: self.accepted,
            proposed_count: self.proposed,
        }
    }

    /// Drift-plus-noise proposal for the current positions. `noise` rows are
    /// standard-normal draws (a zero array gives the pure drift step).
    pub fn propose(&self, noise: &Array2<F>) -> Array2<F> {
        let a = F::from_f64(self.alpha);
        let s = F::from_f64((2.0 * self.alpha).sqrt());
        let mut out = self.positions.clone();
        ndarray::Zip::from(&mut out).and(&self.grads).and(noise).for_each(|p, &g, &n| {
            *p = *p - a * g + s * n;
        });
        out
    }

    /// One MH step with explicit randomness: `noise` drives the proposal,
    /// `log_u` is the per-chain log of the uniform draw (`-inf` forces
    /// acceptance, `+inf` forces rejection).
    pub fn step_with<T: MalaTarget<F>>(
        &mut self,
        target: &T,
        noise: &Array2<F>,
        log_u: &Array1<f64>,
    ) -> Result<()> {
        let proposal = self.propose(noise);
        let e_prop = target.energy(&proposal)?;
        let g_prop = target.grad(&proposal)?;
        let fwd = log_proposal(&proposal, &self.positions, &self.grads, self.alpha);
        let bwd = log_proposal(&self.positions, &proposal, &g_prop, self.alpha);

        for i in 0..self.n_chains() {
            let log_r =
                self.energies[i].to_f64() - e_prop[i].to_f64() + bwd[i] - fwd[i];
            if !log_r.is_nan() && log_u[i] < log_r.min(0.0) {
                self.positions.row_mut(i).assign(&proposal.row(i));
                self.energies[i] = e_prop[i];
                self.grads.row_mut(i).assign(&g_prop.row(i));
                self.accepted += 1;
            }
            self.proposed += 1;
        }
        Ok(())
    }

    pub fn step<T: MalaTarget<F>>(&mut self, target: &T, rng: &mut RngStream) -> Result<()> {
        let noise =
            Array2::from_shape_fn(self.positions.raw_dim(), |_| F::standard_normal(rng));
        let log_u = Array1::from_shape_fn(self.n_chains(), |_| {
            let u: f64 = rng.random();
            u.ln()
        });
        self.step_with(target, &noise, &log_u)
    }
}

/// Everything a finished run reports.
pub struct MalaRun<F: Scalar> {
    /// Positions kept after burn-in, one `n_chains x dim` array per step.
    pub kept: Vec<Array2<F>>,
    pub final_positions: Array2<F>,
    pub final_energies: Array1<F>,
    pub acceptance_rate: f64,
    pub accepted: u64,
    pub proposed: u64,
    /// Set when the whole run rejected every proposal.
    pub warning: Option<String>,
}

impl<F: Scalar> MalaRun<F> {
    /// Kept positions stacked into one `(n_kept * n_chains) x dim` array.
    pub fn kept_stacked(&self) -> Array2<F> {
        let n_chains = self.final_positions.nrows();
        let dim = self.final_positions.ncols();
        let mut out = Array2::zeros((self.kept.len() * n_chains, dim));
        for (s, step) in self.kept.iter().enumerate() {
            for c in 0..n_chains {
                out.row_mut(s * n_chains + c).assign(&step.row(c));
            }
        }
        out
    }
}

/// Runs `chain_length` steps per chain row and keeps everything after
/// `burn_in`.
pub fn run_mala<F: Scalar, T: MalaTarget<F>>(
    target: &T,
    init: Array2<F>,
    cfg: &MalaConfig,
    rng: &mut RngStream,
) -> Result<MalaRun<F>> {
    cfg.validate()?;
    let mut chains = ChainSet::new(target, init, cfg.step_size)?;
    let mut kept = Vec::with_capacity(cfg.chain_length - cfg.burn_in);
    for step in 0..cfg.chain_length {
        chains.step(target, rng)?;
        if step >= cfg.burn_in {
            kept.push(chains.positions().clone());
        }
    }
    let (accepted, proposed) = chains.counts();
    let warning = if accepted == 0 {
        Some(format!(
            "no proposal was accepted over {proposed} attempts; step size {} is likely too large for this target",
            cfg.step_size
        ))
    } else {
        None
    };
    Ok(MalaRun {
        kept,
        final_positions: chains.positions().clone(),
        final_energies: chains.energies().clone(),
        acceptance_rate: chains.acceptance_rate(),
        accepted,
        proposed,
        warning,
    })
}

/// Latent-space run: chains start at `z0`, and the kept latent positions are
/// also mapped through the generator into a sample batch.
pub fn run_latent_mala<F: Scalar>(
    energy: &EnergyFunction<F>,
    generator: &Generator<F>,
    z0: &LatentBatch<F>,
    cfg: &MalaConfig,
    rng: &mut RngStream,
) -> Result<(MalaRun<F>, SampleBatch<F>)> {
    let target = LatentSpaceTarget { energy, generator, include_prior: cfg.include_prior };
    let run = run_mala(&target, z0.values().clone(), cfg, rng)?;
    let samples = generator.generate(&LatentBatch::new(run.kept_stacked())?)?;
    Ok((run, samples))
}

/// Data-space run with target `exp(-E(x))` directly.
pub fn run_visible_mala<F: Scalar>(
    energy: &EnergyFunction<F>,
    x0: &SampleBatch<F>,
    cfg: &MalaConfig,
    rng: &mut RngStream,
) -> Result<MalaRun<F>> {
    let target = VisibleSpaceTarget { energy };
    run_mala(&target, x0.values().clone(), cfg, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn zero_drift_and_zero_noise_stays_put() {
        let target = ConstantTarget { dim: 2 };
        let chains = ChainSet::<f64>::new(&target, array![[0.7, -0.3]], 0.1).unwrap();
        let prop = chains.propose(&Array2::zeros((1, 2)));
        assert_eq!(prop, array![[0.7, -0.3]]);
    }

    #[test]
    fn quadratic_drift_is_analytic() {
        // U(x) = ||x||^2/2 with G identity: z=(1,0), alpha=0.1, eps=0 gives (0.9, 0).
        let target = QuadraticTarget { dim: 2 };
        let chains = ChainSet::<f64>::new(&target, array![[1.0, 0.0]], 0.1).unwrap();
        let prop = chains.propose(&Array2::zeros((1, 2)));
        assert_relative_eq!(prop[[0, 0]], 0.9, max_relative = 1e-12);
        assert_relative_eq!(prop[[0, 1]], 0.0);
    }

    #[test]
    fn proposal_covariance_matches_two_alpha() {
        // With a flat target the proposal is z + sqrt(2 alpha) eps.
        let target = ConstantTarget { dim: 2 };
        let alpha = 0.01;
        let chains = ChainSet::<f64>::new(&target, Array2::zeros((10_000, 2)), alpha).unwrap();
        let mut rng = stream(3, 0);
        let noise = Array2::from_shape_fn((10_000, 2), |_| f64::standard_normal(&mut rng));
        let props = chains.propose(&noise);
        for j in 0..2 {
            let col = props.column(j);
            let mean = col.sum() / col.len() as f64;
            let var =
                col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (col.len() - 1) as f64;
            assert!(
                (var - 2.0 * alpha).abs() / (2.0 * alpha) < 0.05,
                "var {var} vs {}",
                2.0 * alpha
            );
        }
        // Off-diagonal stays near zero.
        let c0 = props.column(0);
        let c1 = props.column(1);
        let m0 = c0.sum() / c0.len() as f64;
        let m1 = c1.sum() / c1.len() as f64;
        let cov = c0
            .iter()
            .zip(c1.iter())
            .map(|(a, b)| (a - m0) * (b - m1))
            .sum::<f64>()
            / (c0.len() - 1) as f64;
        assert!(cov.abs() < 0.05 * 2.0 * alpha, "cross-covariance {cov}");
    }

    #[test]
    fn identical_proposal_has_unit_ratio() {
        let target = QuadraticTarget { dim: 1 };
        let z = array![[0.62]];
        let log_r = log_accept_ratio(&target, &z, &z, 0.1).unwrap();
        assert_eq!(log_r[0], 0.0);
        assert_eq!(accept_prob(log_r[0]), 1.0);
    }

    #[test]
    fn flat_target_always_unit_ratio() {
        let target = ConstantTarget { dim: 2 };
        let from = array![[0.2, -0.4]];
        let to = array![[5.0, 3.0]];
        let log_r = log_accept_ratio(&target, &from, &to, 0.05).unwrap();
        assert_relative_eq!(log_r[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn hand_evaluated_ratio_on_quadratic() {
        // k=1, z=1, z'=0.8, alpha=0.1:
        // p-ratio = exp(-0.32 + 0.5) = exp(0.18)
        // log q(z'|z) = -(0.8 - 1 + 0.1)^2 / 0.4 = -0.025
        // log q(z|z') = -(1 - 0.8 + 0.08)^2 / 0.4 = -0.196
        // log r = 0.18 - 0.196 + 0.025 = 0.009
        let target = QuadraticTarget { dim: 1 };
        let log_r = log_accept_ratio(&target, &array![[1.0]], &array![[0.8]], 0.1).unwrap();
        assert_relative_eq!(log_r[0], 0.009, max_relative = 1e-10);
        assert_relative_eq!(log_r[0].exp(), 1.009040, max_relative = 1e-5);

        // Independent direct-formula evaluation of the same quantity.
        let direct = {
            let (z, zt, a) = (1.0f64, 0.8f64, 0.1f64);
            let p_ratio = (-(zt * zt) / 2.0 + (z * z) / 2.0).exp();
            let q_fwd = (-(zt - z + a * z).powi(2) / (4.0 * a)).exp();
            let q_bwd = (-(z - zt + a * zt).powi(2) / (4.0 * a)).exp();
            p_ratio * q_bwd / q_fwd
        };
        assert_relative_eq!(log_r[0].exp(), direct, max_relative = 1e-12);
    }

    #[test]
    fn reversibility_identity() {
        let target = QuadraticTarget { dim: 3 };
        let mut rng = stream(8, 0);
        let a = Array2::from_shape_fn((16, 3), |_| f64::standard_normal(&mut rng));
        let b = Array2::from_shape_fn((16, 3), |_| f64::standard_normal(&mut rng));
        let fwd = log_accept_ratio(&target, &a, &b, 0.07).unwrap();
        let bwd = log_accept_ratio(&target, &b, &a, 0.07).unwrap();
        for i in 0..16 {
            assert!((fwd[i] + bwd[i]).abs() < 1e-8, "row {i}: {} vs {}", fwd[i], bwd[i]);
        }
    }

    #[test]
    fn forced_rejection_freezes_chain() {
        let target = QuadraticTarget { dim: 2 };
        let z0 = array![[0.5, -0.5]];
        let mut chains = ChainSet::<f64>::new(&target, z0.clone(), 0.05).unwrap();
        let mut rng = stream(9, 0);
        for _ in 0..20 {
            let noise = Array2::from_shape_fn((1, 2), |_| f64::standard_normal(&mut rng));
            chains.step_with(&target, &noise, &array![f64::INFINITY]).unwrap();
        }
        assert_eq!(chains.positions(), &z0);
        assert_eq!(chains.counts(), (0, 20));
        let state = chains.state(0);
        assert_eq!(state.accepted_count, 0);
        assert_eq!(state.proposed_count, 20);
    }

    #[test]
    fn constant_target_accepts_everything() {
        let target = ConstantTarget { dim: 2 };
        let cfg = MalaConfig { step_size: 0.05, chain_length: 50, burn_in: 10, ..Default::default() };
        let mut rng = stream(10, 0);
        let run = run_mala(&target, Array2::<f64>::zeros((4, 2)), &cfg, &mut rng).unwrap();
        assert_eq!(run.acceptance_rate, 1.0);
        assert_eq!(run.kept.len(), 40);
        assert!(run.warning.is_none());
    }

    #[test]
    fn kept_count_is_chain_length_minus_burn_in() {
        let target = QuadraticTarget { dim: 1 };
        let cfg =
            MalaConfig { step_size: 0.05, chain_length: 11, burn_in: 10, ..Default::default() };
        let mut rng = stream(11, 0);
        let run = run_mala(&target, Array2::<f64>::zeros((3, 1)), &cfg, &mut rng).unwrap();
        assert_eq!(run.kept.len(), 1);
        assert_eq!(run.kept_stacked().nrows(), 3);
    }

    #[test]
    fn quadratic_target_moments_match_standard_normal() {
        let target = QuadraticTarget { dim: 2 };
        let cfg = MalaConfig {
            step_size: 0.05,
            chain_length: 50_000,
            burn_in: 2_000,
            ..Default::default()
        };
        let mut rng = stream(12, 0);
        let run = run_mala(&target, Array2::<f64>::zeros((1, 2)), &cfg, &mut rng).unwrap();
        let samples = run.kept_stacked();
        let n = samples.nrows() as f64;
        for j in 0..2 {
            let col = samples.column(j);
            let mean = col.sum() / n;
            assert!(mean.abs() < 0.05, "mean[{j}] = {mean}");
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            assert!((var - 1.0).abs() < 0.05, "var[{j}] = {var}");
        }
        let c0 = samples.column(0);
        let c1 = samples.column(1);
        let m0 = c0.sum() / n;
        let m1 = c1.sum() / n;
        let cov =
            c0.iter().zip(c1.iter()).map(|(a, b)| (a - m0) * (b - m1)).sum::<f64>() / (n - 1.0);
        assert!(cov.abs() < 0.05, "cov = {cov}");
    }

    #[test]
    fn acceptance_rate_decreases_with_step_size() {
        let target = QuadraticTarget { dim: 2 };
        let mut rate = |alpha: f64| {
            let cfg = MalaConfig {
                step_size: alpha,
                chain_length: 10_000,
                burn_in: 100,
                ..Default::default()
            };
            let mut rng = stream(13, 0);
            run_mala(&target, Array2::<f64>::zeros((1, 2)), &cfg, &mut rng).unwrap().acceptance_rate
        };
        let small = rate(0.01);
        let large = rate(0.5);
        assert!(large < small, "alpha=0.5 rate {large} should fall below alpha=0.01 rate {small}");
    }

    #[test]
    fn burn_in_must_be_less_than_chain_length() {
        let target = QuadraticTarget { dim: 1 };
        let cfg = MalaConfig { chain_length: 10, burn_in: 10, ..Default::default() };
        let mut rng = stream(14, 0);
        assert!(matches!(
            run_mala(&target, Array2::<f64>::zeros((1, 1)), &cfg, &mut rng),
            Err(MegError::Config(_))
        ));
    }
}
