//! Training objectives: the JSD mutual-information lower bound, the energy
//! loss with its zero-centered gradient penalty, the generator and statistics
//! losses, and the diagnostic score-matching objective.
//!
//! Value functions are pure; the `*_with_grads` entry points additionally
//! produce parameter gradients for exactly one network each, which is how the
//! stop-gradient structure of the adversarial game is enforced by
//! construction.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MegError, Result};
use crate::nn::{EnergyFunction, Generator, LatentBatch, MlpGrads, SampleBatch, StatisticsNetwork};
use crate::scalar::{sigmoid, softplus, Scalar};

/// Which algebraic route computes the mutual-information bound. Both evaluate
/// the same estimator (`log sigma(t) = -sp(-t)` and `log(1 - sigma(t)) = -sp(t)`);
/// the logistic route mirrors the published training procedure's notation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MiVariant {
    #[default]
    Softplus,
    Logistic,
}

/// Scalar summary of one optimization step, also the metrics-CSV row payload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LossBreakdown {
    /// Mean energy on data samples.
    pub energy_real: f64,
    /// Mean energy on generated samples.
    pub energy_fake: f64,
    /// Mean squared score norm on data samples.
    pub penalty: f64,
    /// JSD mutual-information estimate.
    pub mi_estimate: f64,
    pub loss_e: f64,
    pub loss_g: f64,
    pub loss_t: f64,
}

/// Latent batch whose columns were each independently permuted, simulating
/// draws from the product of marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct ShuffledLatentBatch<F: Scalar> {
    values: Array2<F>,
}

impl<F: Scalar> ShuffledLatentBatch<F> {
    pub fn values(&self) -> &Array2<F> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// Independently permutes every latent coordinate across the batch, breaking
/// the pairing with `G(z)` while preserving each marginal exactly.
pub fn shuffle_marginals<F: Scalar, R: Rng + ?Sized>(
    z: &LatentBatch<F>,
    rng: &mut R,
) -> Result<ShuffledLatentBatch<F>> {
    let m = z.len();
    if m < 2 {
        return Err(MegError::config(
            "per-dimension shuffle needs a batch of at least 2 rows",
        ));
    }
    let mut values = z.values().clone();
    let mut order: Vec<usize> = (0..m).collect();
    for j in 0..z.dim() {
        order.shuffle(rng);
        let column = z.values().column(j);
        for (i, &src) in order.iter().enumerate() {
            values[[i, j]] = column[src];
        }
    }
    Ok(ShuffledLatentBatch { values })
}

fn check_rows(samples: usize, joint: usize, marg: usize) -> Result<()> {
    if samples != joint || samples != marg {
        return Err(MegError::config(format!(
            "MI estimator row-count mismatch: {samples} samples, {joint} joint latents, {marg} marginal latents"
        )));
    }
    Ok(())
}

fn mi_from_statistics<F: Scalar>(
    t_joint: &Array1<F>,
    t_marg: &Array1<F>,
    variant: MiVariant,
) -> f64 {
    let m = t_joint.len() as f64;
    match variant {
        MiVariant::Softplus => {
            let joint: f64 = t_joint.iter().map(|&t| -softplus(-t).to_f64()).sum();
            let marg: f64 = t_marg.iter().map(|&t| softplus(t).to_f64()).sum();
            joint / m - marg / m
        }
        MiVariant::Logistic => {
            // log sigma(t) and log(1 - sigma(t)) in their stable branch forms.
            let joint: f64 = t_joint.iter().map(|&t| -softplus(-t).to_f64()).sum();
            let marg: f64 = t_marg.iter().map(|&t| -softplus(t).to_f64()).sum();
            joint / m + marg / m
        }
    }
}

/// JSD mutual-information lower bound between samples and latents:
/// `mean[-sp(-T(x, z_joint))] - mean[sp(T(x, z_marg))]`.
pub fn mi_jsd<F: Scalar>(
    stats_net: &StatisticsNetwork<F>,
    x: &SampleBatch<F>,
    z_joint: &LatentBatch<F>,
    z_marg: &ShuffledLatentBatch<F>,
) -> Result<f64> {
    check_rows(x.len(), z_joint.len(), z_marg.len())?;
    let t_joint = stats_net.statistic(x, z_joint)?;
    let z_marg_batch = LatentBatch::new(z_marg.values().clone())?;
    let t_marg = stats_net.statistic(x, &z_marg_batch)?;
    Ok(mi_from_statistics(&t_joint, &t_marg, MiVariant::Softplus))
}

/// Mean squared score norm on real data: `(1/m) sum_i ||grad_x E(x_i)||^2`.
pub fn gradient_penalty<F: Scalar>(
    energy: &EnergyFunction<F>,
    x_real: &SampleBatch<F>,
) -> Result<f64> {
    let grad = energy.grad_x(x_real)?;
    let m = x_real.len() as f64;
    let total: f64 = grad
        .iter()
        .map(|&g| {
            let g = g.to_f64();
            g * g
        })
        .sum();
    Ok(total / m)
}

/// Energy loss `mean E(x_real) - mean E(x_fake) + lambda * penalty`.
pub fn energy_loss<F: Scalar>(
    energy: &EnergyFunction<F>,
    x_real: &SampleBatch<F>,
    x_fake: &SampleBatch<F>,
    lambda: f64,
) -> Result<(f64, LossBreakdown)> {
    if lambda < 0.0 {
        return Err(MegError::config("penalty coefficient must be >= 0"));
    }
    if x_real.len() != x_fake.len() {
        return Err(MegError::config(format!(
            "energy loss batch-size mismatch: {} real vs {} fake",
            x_real.len(),
            x_fake.len()
        )));
    }
    let e_real = mean(&energy.energy(x_real)?);
    let e_fake = mean(&energy.energy(x_fake)?);
    let penalty = if lambda > 0.0 { gradient_penalty(energy, x_real)? } else { 0.0 };
    let loss = e_real - e_fake + lambda * penalty;
    let breakdown = LossBreakdown {
        energy_real: e_real,
        energy_fake: e_fake,
        penalty,
        loss_e: loss,
        ..LossBreakdown::default()
    };
    Ok((loss, breakdown))
}

/// Generator loss `mean E(G(z)) - I_JSD(G(z), z)`.
pub fn generator_loss<F: Scalar>(
    energy: &EnergyFunction<F>,
    stats_net: &StatisticsNetwork<F>,
    generator: &Generator<F>,
    z: &LatentBatch<F>,
    z_marg: &ShuffledLatentBatch<F>,
    variant: MiVariant,
) -> Result<(f64, LossBreakdown)> {
    let x_fake = generator.generate(z)?;
    check_rows(x_fake.len(), z.len(), z_marg.len())?;
    let e_fake = mean(&energy.energy(&x_fake)?);
    let t_joint = stats_net.statistic(&x_fake, z)?;
    let z_marg_batch = LatentBatch::new(z_marg.values().clone())?;
    let t_marg = stats_net.statistic(&x_fake, &z_marg_batch)?;
    let mi = mi_from_statistics(&t_joint, &t_marg, variant);
    let loss = e_fake - mi;
    let breakdown = LossBreakdown {
        energy_fake: e_fake,
        mi_estimate: mi,
        loss_g: loss,
        loss_t: -mi,
        ..LossBreakdown::default()
    };
    Ok((loss, breakdown))
}

/// Statistics-network loss `-I_JSD`; minimizing it in phi ascends the bound.
pub fn statistics_loss<F: Scalar>(
    stats_net: &StatisticsNetwork<F>,
    x_fake: &SampleBatch<F>,
    z: &LatentBatch<F>,
    z_marg: &ShuffledLatentBatch<F>,
    variant: MiVariant,
) -> Result<f64> {
    check_rows(x_fake.len(), z.len(), z_marg.len())?;
    let t_joint = stats_net.statistic(x_fake, z)?;
    let z_marg_batch = LatentBatch::new(z_marg.values().clone())?;
    let t_marg = stats_net.statistic(x_fake, &z_marg_batch)?;
    Ok(-mi_from_statistics(&t_joint, &t_marg, variant))
}

fn mean<F: Scalar>(v: &Array1<F>) -> f64 {
    v.iter().map(|&x| x.to_f64()).sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------------------
// Gradient entry points used by the trainer.
// ---------------------------------------------------------------------------

/// Energy loss plus its parameter gradients. Gradients flow only into theta.
pub fn energy_loss_with_grads<F: Scalar>(
    energy: &EnergyFunction<F>,
    x_real: &SampleBatch<F>,
    x_fake: &SampleBatch<F>,
    lambda: f64,
) -> Result<(LossBreakdown, MlpGrads<F>)> {
    let (_, breakdown) = energy_loss(energy, x_real, x_fake, lambda)?;
    let m = x_real.len();
    let mut grads = MlpGrads::zeros_like(&energy.net);

    let w_real = Array1::from_elem(m, F::from_f64(1.0 / m as f64));
    energy.accumulate_param_grads(x_real, &w_real, &mut grads)?;
    let w_fake = Array1::from_elem(m, F::from_f64(-1.0 / m as f64));
    energy.accumulate_param_grads(x_fake, &w_fake, &mut grads)?;

    if lambda > 0.0 {
        // d/dtheta of the mean squared score norm: reverse-over-forward along
        // the score direction with per-row weight 2*lambda/m.
        let score = energy.grad_x(x_real)?;
        let w_pen = Array1::from_elem(m, F::from_f64(2.0 * lambda / m as f64));
        energy.net.jvp_param_backward(x_real.values(), &score, &w_pen, &mut grads);
    }

    if !grads.is_finite() {
        return Err(MegError::numeric(
            "energy loss produced non-finite parameter gradients".to_string(),
        ));
    }
    Ok((breakdown, grads))
}

/// One joint forward pass for the generator/statistics phase: returns the
/// breakdown plus omega gradients of `loss_G` and phi gradients of `loss_T`.
///
/// Generator gradients flow through both MI terms (joint and shuffled pair)
/// as well as the energy term; they never touch theta or phi, and the phi
/// gradients never touch omega.
pub fn generator_statistics_grads<F: Scalar>(
    energy: &EnergyFunction<F>,
    stats_net: &StatisticsNetwork<F>,
    generator: &Generator<F>,
    z: &LatentBatch<F>,
    z_marg: &ShuffledLatentBatch<F>,
    variant: MiVariant,
) -> Result<(LossBreakdown, MlpGrads<F>, MlpGrads<F>)> {
    check_rows(z.len(), z.len(), z_marg.len())?;
    let m = z.len();
    let m_f = m as f64;

    let gen_cache = generator.net.forward_cached(z.values());
    let x_fake = SampleBatch::new(gen_cache.output())
        .map_err(|_| MegError::numeric("generator output non-finite".to_string()))?;

    let energies = energy.energy(&x_fake)?;
    let e_fake = mean(&energies);

    let t_joint = stats_net.statistic(&x_fake, z)?;
    let z_marg_batch = LatentBatch::new(z_marg.values().clone())?;
    let t_marg = stats_net.statistic(&x_fake, &z_marg_batch)?;
    let mi = mi_from_statistics(&t_joint, &t_marg, variant);

    // d(mi)/dt on each branch; identical for both variants.
    let w_joint_mi: Array1<F> = t_joint.mapv(|t| sigmoid(-t) / F::from_f64(m_f));
    let w_marg_mi: Array1<F> = t_marg.mapv(|t| -sigmoid(t) / F::from_f64(m_f));

    // --- phi gradients of loss_T = -mi ---
    let mut grads_t = MlpGrads::zeros_like(&stats_net.net);
    let neg_joint = w_joint_mi.mapv(|w| -w);
    let neg_marg = w_marg_mi.mapv(|w| -w);
    stats_net.backward_pairs(x_fake.values(), z.values(), &neg_joint, Some(&mut grads_t))?;
    stats_net.backward_pairs(x_fake.values(), z_marg.values(), &neg_marg, Some(&mut grads_t))?;

    // --- omega gradients of loss_G = mean E(x_fake) - mi ---
    // dL/dx_fake accumulates three contributions, then one reverse pass
    // through the generator.
    let mut grad_x = energy.grad_x(&x_fake)?;
    grad_x.mapv_inplace(|g| g / F::from_f64(m_f));
    let d_joint = stats_net.backward_pairs(x_fake.values(), z.values(), &neg_joint, None)?;
    let d_marg = stats_net.backward_pairs(x_fake.values(), z_marg.values(), &neg_marg, None)?;
    grad_x = grad_x + &d_joint + &d_marg;

    let mut grads_g = MlpGrads::zeros_like(&generator.net);
    generator.net.backward(&gen_cache, &grad_x, Some(&mut grads_g));

    if !grads_g.is_finite() || !grads_t.is_finite() {
        return Err(MegError::numeric(
            "generator/statistics losses produced non-finite parameter gradients".to_string(),
        ));
    }

    let loss_g = e_fake - mi;
    let breakdown = LossBreakdown {
        energy_fake: e_fake,
        mi_estimate: mi,
        loss_g,
        loss_t: -mi,
        ..LossBreakdown::default()
    };
    Ok((breakdown, grads_g, grads_t))
}

/// Diagnostic Hyvarinen objective
/// `(1/m) sum_i [ 1/2 ||grad_x E(x_i)||^2 - sum_j d^2 E / dx_ij^2 ]`
/// with the Hessian diagonal from central second differences of step `h`.
/// Evaluation-only; refuses d > 16.
pub fn score_matching_diag<F: Scalar>(
    energy: &EnergyFunction<F>,
    x: &SampleBatch<F>,
    h: f64,
) -> Result<f64> {
    if x.dim() > 16 {
        return Err(MegError::Scope(format!(
            "score-matching diagnostic is limited to d <= 16, got d = {}",
            x.dim()
        )));
    }
    if h <= 0.0 {
        return Err(MegError::config("finite-difference step must be positive"));
    }
    let m = x.len();
    let grad = energy.grad_x(x)?;
    let score_term: f64 = grad
        .iter()
        .map(|&g| {
            let g = g.to_f64();
            g * g
        })
        .sum::<f64>()
        / (2.0 * m as f64);

    let base = energy.energy(x)?;
    let hs = F::from_f64(h);
    let mut trace_term = 0.0;
    for j in 0..x.dim() {
        let mut xp = x.values().clone();
        let mut xm = x.values().clone();
        for i in 0..m {
            xp[[i, j]] += hs;
            xm[[i, j]] -= hs;
        }
        let ep = energy.energy(&SampleBatch::new(xp)?)?;
        let em = energy.energy(&SampleBatch::new(xm)?)?;
        for i in 0..m {
            trace_term += (ep[i].to_f64() - 2.0 * base[i].to_f64() + em[i].to_f64()) / (h * h);
        }
    }
    Ok(score_term - trace_term / m as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, NetworkSpec};
    use crate::rng::stream;
    use approx::assert_relative_eq;
    use ndarray::array;

    const LN2: f64 = std::f64::consts::LN_2;

    fn zero_stats(d: usize, k: usize) -> StatisticsNetwork<f64> {
        let mut rng = stream(2, 0);
        let spec = NetworkSpec::new(vec![8], Activation::Tanh);
        let mut t = StatisticsNetwork::init(d, k, &spec, &mut rng).unwrap();
        t.net.layers.last_mut().unwrap().weights.fill(0.0);
        t.net.layers.last_mut().unwrap().bias.fill(0.0);
        t
    }

    fn const_stats(d: usize, k: usize, c: f64) -> StatisticsNetwork<f64> {
        let mut t = zero_stats(d, k);
        t.net.layers.last_mut().unwrap().bias.fill(c);
        t
    }

    fn random_energy(d: usize, seed: u64) -> EnergyFunction<f64> {
        let mut rng = stream(seed, 0);
        EnergyFunction::init(d, &NetworkSpec::new(vec![8, 6], Activation::Softplus), &mut rng)
            .unwrap()
    }

    fn batches(m: usize, d: usize, k: usize, seed: u64) -> (SampleBatch<f64>, LatentBatch<f64>) {
        let mut rng = stream(seed, 1);
        let x = SampleBatch::new(Array2::from_shape_fn((m, d), |_| f64::standard_normal(&mut rng)))
            .unwrap();
        let z = LatentBatch::new(Array2::from_shape_fn((m, k), |_| f64::standard_normal(&mut rng)))
            .unwrap();
        (x, z)
    }

    #[test]
    fn shuffle_rejects_single_row() {
        let z = LatentBatch::new(array![[1.0, 2.0]]).unwrap();
        assert!(matches!(
            shuffle_marginals(&z, &mut stream(0, 0)).unwrap_err(),
            MegError::Config(_)
        ));
    }

    #[test]
    fn shuffle_preserves_column_multisets() {
        let (_, z) = batches(64, 2, 3, 5);
        let shuffled = shuffle_marginals(&z, &mut stream(9, 0)).unwrap();
        for j in 0..z.dim() {
            let mut a: Vec<f64> = z.values().column(j).to_vec();
            let mut b: Vec<f64> = shuffled.values().column(j).to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert_eq!(a, b, "column {j} is not a permutation");
        }
    }

    #[test]
    fn shuffle_decorrelates_pairs() {
        // Pair each z with a dependent statistic, shuffle, and check the
        // empirical correlation collapses.
        let m = 1000;
        let mut rng = stream(17, 0);
        let z = LatentBatch::new(Array2::from_shape_fn((m, 2), |_| f64::standard_normal(&mut rng)))
            .unwrap();
        let paired: Vec<f64> = z.values().column(0).iter().map(|&v| 2.0 * v + 0.5).collect();
        let shuffled = shuffle_marginals(&z, &mut rng).unwrap();

        let corr = |a: &[f64], b: &[f64]| {
            let n = a.len() as f64;
            let ma = a.iter().sum::<f64>() / n;
            let mb = b.iter().sum::<f64>() / n;
            let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
            let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum::<f64>() / n;
            let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum::<f64>() / n;
            cov / (va.sqrt() * vb.sqrt())
        };
        let col: Vec<f64> = shuffled.values().column(0).to_vec();
        let rho = corr(&col, &paired);
        assert!(rho.abs() < 0.1, "|rho| = {}", rho.abs());
        // Sanity: the unshuffled pairing is strongly correlated.
        let orig: Vec<f64> = z.values().column(0).to_vec();
        assert!(corr(&orig, &paired) > 0.99);
    }

    #[test]
    fn mi_jsd_constant_statistics() {
        let (x, z) = batches(16, 3, 2, 7);
        let z_marg = shuffle_marginals(&z, &mut stream(1, 2)).unwrap();

        let t0 = zero_stats(3, 2);
        let mi0 = mi_jsd(&t0, &x, &z, &z_marg).unwrap();
        assert_relative_eq!(mi0, -2.0 * LN2, max_relative = 1e-12);

        let t1 = const_stats(3, 2, 1.0);
        let mi1 = mi_jsd(&t1, &x, &z, &z_marg).unwrap();
        let expected = -(softplus(-1.0f64) + softplus(1.0f64));
        assert_relative_eq!(mi1, expected, max_relative = 1e-12);
        assert_relative_eq!(mi1, -1.6265, max_relative = 1e-4);

        // Constant-T bound: maximized at t = 0.
        for c in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            let t = const_stats(3, 2, c);
            let mi = mi_jsd(&t, &x, &z, &z_marg).unwrap();
            assert!(mi <= -2.0 * LN2 + 1e-12, "c = {c}: mi = {mi}");
        }
    }

    #[test]
    fn mi_jsd_softplus_limits_are_stable() {
        // Saturated statistics approach the estimator's upper limit of 0
        // without overflowing, even at |T| = 1e4.
        let t_joint = array![1e4f64];
        let t_marg = array![-1e4f64];
        let mi = mi_from_statistics(&t_joint, &t_marg, MiVariant::Softplus);
        assert!(mi.is_finite());
        assert!(mi <= 0.0 && mi > -1e-12, "mi = {mi}");
    }

    #[test]
    fn mi_variants_agree() {
        let (x, z) = batches(32, 3, 2, 21);
        let z_marg = shuffle_marginals(&z, &mut stream(3, 3)).unwrap();
        let mut rng = stream(33, 0);
        let t = StatisticsNetwork::<f64>::init(
            3,
            2,
            &NetworkSpec::new(vec![10], Activation::Tanh),
            &mut rng,
        )
        .unwrap();
        let tj = t.statistic(&x, &z).unwrap();
        let tm = t.statistic(&x, &LatentBatch::new(z_marg.values().clone()).unwrap()).unwrap();
        let a = mi_from_statistics(&tj, &tm, MiVariant::Softplus);
        let b = mi_from_statistics(&tj, &tm, MiVariant::Logistic);
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn gradient_penalty_analytic_and_scaling() {
        let e = random_energy(2, 40);
        let x = SampleBatch::new(array![[0.3, -0.8], [1.1, 0.4], [-0.5, 0.9]]).unwrap();
        let p = gradient_penalty(&e, &x).unwrap();
        assert!(p >= 0.0);

        // Scaling the energy by c scales the penalty by c^2.
        for c in [2.0, 10.0] {
            let mut scaled = e.clone();
            let last = scaled.net.layers.last_mut().unwrap();
            last.weights.mapv_inplace(|w| w * c);
            last.bias.mapv_inplace(|b| b * c);
            let ps = gradient_penalty(&scaled, &x).unwrap();
            assert_relative_eq!(ps, c * c * p, max_relative = 1e-9);
        }

        // Permutation invariance.
        let xp = SampleBatch::new(array![[1.1, 0.4], [-0.5, 0.9], [0.3, -0.8]]).unwrap();
        assert_relative_eq!(gradient_penalty(&e, &xp).unwrap(), p, max_relative = 1e-12);
    }

    #[test]
    fn gradient_penalty_matches_finite_differences() {
        let e = random_energy(3, 41);
        let x = SampleBatch::new(array![[0.2, -0.4, 0.7], [0.9, 0.1, -0.3]]).unwrap();
        let p = gradient_penalty(&e, &x).unwrap();

        let h = 1e-5;
        let mut fd_total = 0.0;
        for i in 0..x.len() {
            for j in 0..x.dim() {
                let mut xp = x.values().clone();
                let mut xm = x.values().clone();
                xp[[i, j]] += h;
                xm[[i, j]] -= h;
                let ep = e.energy(&SampleBatch::new(xp).unwrap()).unwrap()[i];
                let em = e.energy(&SampleBatch::new(xm).unwrap()).unwrap()[i];
                let g = (ep - em) / (2.0 * h);
                fd_total += g * g;
            }
        }
        let fd = fd_total / x.len() as f64;
        assert_relative_eq!(p, fd, max_relative = 1e-3);
    }

    #[test]
    fn energy_loss_cases() {
        let e = random_energy(2, 42);
        let x = SampleBatch::new(array![[0.5, -0.2], [1.0, 0.3]]).unwrap();

        // Identical batches, no penalty: exact cancellation.
        let (loss, bd) = energy_loss(&e, &x, &x, 0.0).unwrap();
        assert_relative_eq!(loss, 0.0, epsilon = 1e-12);
        assert_eq!(bd.penalty, 0.0);

        // Antisymmetry under batch swap at lambda = 0.
        let y = SampleBatch::new(array![[-0.7, 0.9], [0.2, 0.1]]).unwrap();
        let (l_xy, _) = energy_loss(&e, &x, &y, 0.0).unwrap();
        let (l_yx, _) = energy_loss(&e, &y, &x, 0.0).unwrap();
        assert_relative_eq!(l_xy, -l_yx, max_relative = 1e-12);

        // Breakdown identity with penalty.
        let (loss_p, bd_p) = energy_loss(&e, &x, &y, 0.1).unwrap();
        assert_relative_eq!(
            loss_p,
            bd_p.energy_real - bd_p.energy_fake + 0.1 * bd_p.penalty,
            max_relative = 1e-12
        );

        // Batch-size mismatch.
        let short = SampleBatch::new(array![[0.0, 0.0]]).unwrap();
        assert!(matches!(energy_loss(&e, &x, &short, 0.0).unwrap_err(), MegError::Config(_)));
    }

    #[test]
    fn generator_loss_trivial_composition() {
        // T = 0 and E = 0: loss_G = 0 - (-2 ln 2) = 2 ln 2.
        let mut rng = stream(50, 0);
        let g = Generator::<f64>::init(2, 2, &NetworkSpec::new(vec![6], Activation::Tanh), &mut rng)
            .unwrap();
        let mut e = random_energy(2, 51);
        e.net.layers.last_mut().unwrap().weights.fill(0.0);
        e.net.layers.last_mut().unwrap().bias.fill(0.0);
        let t = zero_stats(2, 2);
        let (_, z) = batches(8, 2, 2, 52);
        let z_marg = shuffle_marginals(&z, &mut stream(6, 6)).unwrap();
        let (loss, bd) = generator_loss(&e, &t, &g, &z, &z_marg, MiVariant::Softplus).unwrap();
        assert_relative_eq!(loss, 2.0 * LN2, max_relative = 1e-12);
        assert_relative_eq!(bd.loss_g, bd.energy_fake - bd.mi_estimate, max_relative = 1e-9);
    }

    #[test]
    fn statistics_loss_zero_head() {
        let t = zero_stats(3, 2);
        let (x, z) = batches(8, 3, 2, 53);
        let z_marg = shuffle_marginals(&z, &mut stream(7, 7)).unwrap();
        let loss = statistics_loss(&t, &x, &z, &z_marg, MiVariant::Softplus).unwrap();
        assert_relative_eq!(loss, 2.0 * LN2, max_relative = 1e-12);
    }

    #[test]
    fn generator_and_statistics_grads_match_finite_differences() {
        let mut rng = stream(60, 0);
        let g = Generator::<f64>::init(2, 3, &NetworkSpec::new(vec![5], Activation::Tanh), &mut rng)
            .unwrap();
        let e = random_energy(3, 61);
        let t = StatisticsNetwork::<f64>::init(
            3,
            2,
            &NetworkSpec::new(vec![6], Activation::Tanh),
            &mut stream(62, 0),
        )
        .unwrap();
        let (_, z) = batches(4, 3, 2, 63);
        let z_marg = shuffle_marginals(&z, &mut stream(8, 8)).unwrap();

        let (_, grads_g, grads_t) =
            generator_statistics_grads(&e, &t, &g, &z, &z_marg, MiVariant::Softplus).unwrap();

        let h = 1e-6;
        let loss_of = |gen: &Generator<f64>| {
            generator_loss(&e, &t, gen, &z, &z_marg, MiVariant::Softplus).unwrap().0
        };
        for l in 0..g.net.layers.len() {
            for idx in 0..g.net.layers[l].weights.len() {
                let mut gp = g.clone();
                let mut gm = g.clone();
                gp.net.layers[l].weights.as_slice_mut().unwrap()[idx] += h;
                gm.net.layers[l].weights.as_slice_mut().unwrap()[idx] -= h;
                let fd = (loss_of(&gp) - loss_of(&gm)) / (2.0 * h);
                let an = grads_g.weights[l].as_slice().unwrap()[idx];
                assert!(
                    (an - fd).abs() / fd.abs().max(1e-7) < 1e-3,
                    "G layer {l} w[{idx}]: analytic {an} fd {fd}"
                );
            }
        }

        let x_fake = g.generate(&z).unwrap();
        let loss_of_t = |tn: &StatisticsNetwork<f64>| {
            statistics_loss(tn, &x_fake, &z, &z_marg, MiVariant::Softplus).unwrap()
        };
        for l in 0..t.net.layers.len() {
            for idx in 0..t.net.layers[l].weights.len() {
                let mut tp = t.clone();
                let mut tm = t.clone();
                tp.net.layers[l].weights.as_slice_mut().unwrap()[idx] += h;
                tm.net.layers[l].weights.as_slice_mut().unwrap()[idx] -= h;
                let fd = (loss_of_t(&tp) - loss_of_t(&tm)) / (2.0 * h);
                let an = grads_t.weights[l].as_slice().unwrap()[idx];
                assert!(
                    (an - fd).abs() / fd.abs().max(1e-7) < 1e-3,
                    "T layer {l} w[{idx}]: analytic {an} fd {fd}"
                );
            }
        }
    }

    #[test]
    fn stop_gradient_contract() {
        // Perturbing theta leaves the phi gradient unchanged at fixed inputs.
        let mut rng = stream(70, 0);
        let g = Generator::<f64>::init(2, 3, &NetworkSpec::new(vec![4], Activation::Tanh), &mut rng)
            .unwrap();
        let e = random_energy(3, 71);
        let t = StatisticsNetwork::<f64>::init(
            3,
            2,
            &NetworkSpec::new(vec![4], Activation::Tanh),
            &mut stream(72, 0),
        )
        .unwrap();
        let (x, z) = batches(4, 3, 2, 73);
        let z_marg = shuffle_marginals(&z, &mut stream(9, 9)).unwrap();

        let (_, _, grads_t_before) =
            generator_statistics_grads(&e, &t, &g, &z, &z_marg, MiVariant::Softplus).unwrap();
        let mut e_perturbed = e.clone();
        e_perturbed.net.layers[0].weights[[0, 0]] += 0.37;
        let (_, _, grads_t_after) =
            generator_statistics_grads(&e_perturbed, &t, &g, &z, &z_marg, MiVariant::Softplus)
                .unwrap();
        for (a, b) in grads_t_before.values().zip(grads_t_after.values()) {
            assert_eq!(a, b);
        }

        // The energy loss does not read phi at all: same inputs, same theta
        // gradient, regardless of any statistics network state.
        let x_fake = g.generate(&z).unwrap();
        let (_, grads_e_before) = energy_loss_with_grads(&e, &x, &x_fake, 0.1).unwrap();
        let (_, grads_e_after) = energy_loss_with_grads(&e, &x, &x_fake, 0.1).unwrap();
        for (a, b) in grads_e_before.values().zip(grads_e_after.values()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn energy_loss_grads_match_finite_differences_with_penalty() {
        let e = random_energy(2, 90);
        let (x, _) = batches(3, 2, 2, 91);
        let (y, _) = batches(3, 2, 2, 92);
        let lambda = 0.1;
        let (_, grads) = energy_loss_with_grads(&e, &x, &y, lambda).unwrap();

        let loss_of = |en: &EnergyFunction<f64>| energy_loss(en, &x, &y, lambda).unwrap().0;
        let h = 1e-6;
        for l in 0..e.net.layers.len() {
            for idx in 0..e.net.layers[l].weights.len() {
                let mut ep = e.clone();
                let mut em = e.clone();
                ep.net.layers[l].weights.as_slice_mut().unwrap()[idx] += h;
                em.net.layers[l].weights.as_slice_mut().unwrap()[idx] -= h;
                let fd = (loss_of(&ep) - loss_of(&em)) / (2.0 * h);
                let an = grads.weights[l].as_slice().unwrap()[idx];
                assert!(
                    (an - fd).abs() / fd.abs().max(1e-7) < 1e-3,
                    "E layer {l} w[{idx}]: analytic {an} fd {fd}"
                );
            }
        }
    }

    #[test]
    fn score_matching_diagnostic() {
        // Constant energy: exactly zero.
        let mut e = random_energy(2, 80);
        e.net.layers.last_mut().unwrap().weights.fill(0.0);
        e.net.layers.last_mut().unwrap().bias.fill(3.0);
        let x = SampleBatch::new(array![[0.4, -0.6], [0.1, 0.2]]).unwrap();
        let v = score_matching_diag(&e, &x, 1e-4).unwrap();
        assert_relative_eq!(v, 0.0, epsilon = 1e-6);

        // Step-halving consistency on a random smooth energy.
        let e = random_energy(2, 81);
        let a = score_matching_diag(&e, &x, 1e-3).unwrap();
        let b = score_matching_diag(&e, &x, 1e-4).unwrap();
        assert!((a - b).abs() / b.abs().max(1e-10) < 1e-2, "h-sweep unstable: {a} vs {b}");

        // Scope refusal.
        let wide = SampleBatch::new(Array2::zeros((1, 17))).unwrap();
        let e17 = random_energy(17, 82);
        assert!(matches!(
            score_matching_diag(&e17, &wide, 1e-4).unwrap_err(),
            MegError::Scope(_)
        ));
    }
}
