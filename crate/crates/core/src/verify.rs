//! Self-check suites behind the `check` subcommand: gradient correctness
//! against central finite differences at double precision, MI estimator
//! sanity (exact constants plus a trained statistics network on dependent vs
//! independent pairs), and MALA correctness on the analytic quadratic target.
//!
//! The finite-difference oracles here are the independent route: they never
//! call the reverse-mode code they are checking.

use ndarray::{Array1, Array2};

use crate::error::Result;
use crate::nn::{
    grad_energy_latent, Activation, EnergyFunction, Generator, LatentBatch, NetworkSpec,
    SampleBatch, StatisticsNetwork,
};
use crate::objectives::{
    energy_loss, energy_loss_with_grads, generator_loss, generator_statistics_grads, mi_jsd,
    shuffle_marginals, statistics_loss, MiVariant,
};
use crate::rng::{self, stream};
use crate::sampler::{log_accept_ratio, run_mala, MalaConfig, QuadraticTarget};
use crate::scalar::Scalar;
use crate::trainer::{adam_step, AdamHyperParams, OptimizerState};

/// One pass/fail line of a verification suite.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckResult { name: name.to_string(), passed, detail }
    }

    pub fn print_line(&self) -> String {
        format!("{} {} — {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

const GRAD_TOL: f64 = 1e-4;

/// Relative error with a floor that keeps near-zero gradients meaningful
/// under f64 finite-difference noise.
fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / fd.abs().max(analytic.abs()).max(1e-4)
}

/// Central-difference check of every parameter of a probe model: `net`
/// exposes the probe's network, `loss` re-evaluates the objective on the
/// perturbed probe. Returns the worst relative error.
fn fd_check_params<T, N, L>(mut probe: T, net: N, analytic: &[f64], loss: L) -> f64
where
    N: Fn(&mut T) -> &mut crate::nn::Mlp<f64>,
    L: Fn(&T) -> f64,
{
    let h = 1e-5;
    let n = net(&mut probe).n_params();
    assert_eq!(n, analytic.len());
    let mut worst = 0.0f64;
    for idx in 0..n {
        let original = *net(&mut probe).params_mut().nth(idx).unwrap();
        *net(&mut probe).params_mut().nth(idx).unwrap() = original + h;
        let up = loss(&probe);
        *net(&mut probe).params_mut().nth(idx).unwrap() = original - h;
        let down = loss(&probe);
        *net(&mut probe).params_mut().nth(idx).unwrap() = original;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max(rel_err(analytic[idx], fd));
    }
    worst
}

/// Criterion: every analytic gradient matches central finite differences at
/// double precision, relative error < 1e-4, on batches <= 8 and networks
/// <= 1e3 parameters.
pub fn gradient_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();
    let mut rng = stream(seed, rng::streams::EVAL);

    let d = 3;
    let k = 2;
    let m = 6;
    let e_spec = NetworkSpec::new(vec![12, 10], Activation::Softplus);
    let g_spec = NetworkSpec::new(vec![10], Activation::Tanh);
    let t_spec = NetworkSpec::new(vec![12], Activation::Tanh);
    let energy = EnergyFunction::<f64>::init(d, &e_spec, &mut rng)?;
    let generator = Generator::<f64>::init(k, d, &g_spec, &mut rng)?;
    let stats = StatisticsNetwork::<f64>::init(d, k, &t_spec, &mut rng)?;
    assert!(energy.net.n_params() <= 1000 && generator.net.n_params() <= 1000);

    let x = SampleBatch::new(Array2::from_shape_fn((m, d), |_| f64::standard_normal(&mut rng)))?;
    let z = LatentBatch::new(Array2::from_shape_fn((m, k), |_| f64::standard_normal(&mut rng)))?;
    let z_marg = shuffle_marginals(&z, &mut rng)?;

    // 1. Energy gradient w.r.t. inputs.
    {
        let grad = energy.grad_x(&x)?;
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..m {
            for j in 0..d {
                let mut xp = x.values().clone();
                let mut xm = x.values().clone();
                xp[[i, j]] += h;
                xm[[i, j]] -= h;
                let fd = (energy.energy(&SampleBatch::new(xp)?)?[i]
                    - energy.energy(&SampleBatch::new(xm)?)?[i])
                    / (2.0 * h);
                worst = worst.max(rel_err(grad[[i, j]], fd));
            }
        }
        results.push(CheckResult::new(
            "grad/energy-input",
            worst < GRAD_TOL,
            format!("max relative error {worst:.2e} (tolerance {GRAD_TOL:.0e})"),
        ));
    }

    // 2. Chain-rule gradient w.r.t. latents.
    {
        let grad = grad_energy_latent(&energy, &generator, &z)?;
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..m {
            for j in 0..k {
                let mut zp = z.values().clone();
                let mut zm = z.values().clone();
                zp[[i, j]] += h;
                zm[[i, j]] -= h;
                let up = energy.energy(&generator.generate(&LatentBatch::new(zp)?)?)?[i];
                let down = energy.energy(&generator.generate(&LatentBatch::new(zm)?)?)?[i];
                let fd = (up - down) / (2.0 * h);
                worst = worst.max(rel_err(grad[[i, j]], fd));
            }
        }
        results.push(CheckResult::new(
            "grad/energy-latent-chain",
            worst < GRAD_TOL,
            format!("max relative error {worst:.2e}"),
        ));
    }

    // 3. Energy-loss parameter gradient, penalty included.
    {
        let x_fake = generator.generate(&z)?;
        let lambda = 0.1;
        let (_, grads) = energy_loss_with_grads(&energy, &x, &x_fake, lambda)?;
        let flat: Vec<f64> = grads.values().copied().collect();
        let worst = fd_check_params(
            energy.clone(),
            |e: &mut EnergyFunction<f64>| &mut e.net,
            &flat,
            |e| energy_loss(e, &x, &x_fake, lambda).unwrap().0,
        );
        results.push(CheckResult::new(
            "grad/energy-loss-params",
            worst < GRAD_TOL,
            format!("max relative error {worst:.2e} over {} parameters", flat.len()),
        ));
    }

    // 4. Generator-loss parameter gradient.
    {
        let (_, grads_g, grads_t) =
            generator_statistics_grads(&energy, &stats, &generator, &z, &z_marg, MiVariant::Softplus)?;
        let flat_g: Vec<f64> = grads_g.values().copied().collect();
        let worst_g = fd_check_params(
            generator.clone(),
            |g: &mut Generator<f64>| &mut g.net,
            &flat_g,
            |g| generator_loss(&energy, &stats, g, &z, &z_marg, MiVariant::Softplus).unwrap().0,
        );
        results.push(CheckResult::new(
            "grad/generator-loss-params",
            worst_g < GRAD_TOL,
            format!("max relative error {worst_g:.2e} over {} parameters", flat_g.len()),
        ));

        // 5. Statistics-loss parameter gradient, same forward pass.
        let x_fake = generator.generate(&z)?;
        let flat_t: Vec<f64> = grads_t.values().copied().collect();
        let worst_t = fd_check_params(
            stats.clone(),
            |t: &mut StatisticsNetwork<f64>| &mut t.net,
            &flat_t,
            |t| statistics_loss(t, &x_fake, &z, &z_marg, MiVariant::Softplus).unwrap(),
        );
        results.push(CheckResult::new(
            "grad/statistics-loss-params",
            worst_t < GRAD_TOL,
            format!("max relative error {worst_t:.2e} over {} parameters", flat_t.len()),
        ));
    }

    Ok(results)
}

/// Trains a fresh statistics network on (x, z) pairs and returns the final
/// MI estimate on a held-out batch.
fn train_mi_probe(dependent: bool, seed: u64) -> Result<f64> {
    let k = 2;
    let d = 2;
    let m = 256;
    let mut rng = stream(seed, rng::streams::EVAL);
    let mut stats = StatisticsNetwork::<f64>::init(
        d,
        k,
        &NetworkSpec::new(vec![64, 64], Activation::LeakyRelu),
        &mut rng,
    )?;
    let mut opt = OptimizerState::new(stats.net.n_params());
    let hp = AdamHyperParams { alpha: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 };

    // Deterministic dependent pairs: x = A z; independent: fresh draws.
    let a = ndarray::array![[1.3, -0.7], [0.4, 0.9]];
    let make_batch = |rng: &mut rng::RngStream, m: usize| -> (SampleBatch<f64>, LatentBatch<f64>) {
        let z = Array2::from_shape_fn((m, k), |_| f64::standard_normal(rng));
        let x = if dependent {
            z.dot(&a)
        } else {
            Array2::from_shape_fn((m, d), |_| f64::standard_normal(rng))
        };
        (SampleBatch::new(x).unwrap(), LatentBatch::new(z).unwrap())
    };

    for _ in 0..1200 {
        let (x, z) = make_batch(&mut rng, m);
        let z_marg = shuffle_marginals(&z, &mut rng)?;
        let t_joint = stats.statistic(&x, &z)?;
        let z_marg_batch = LatentBatch::new(z_marg.values().clone())?;
        let t_marg = stats.statistic(&x, &z_marg_batch)?;
        // d(-mi)/dt weights on both branches.
        let mf = m as f64;
        let w_joint: Array1<f64> =
            t_joint.mapv(|t| -crate::scalar::sigmoid(-t) / mf);
        let w_marg: Array1<f64> = t_marg.mapv(|t| crate::scalar::sigmoid(t) / mf);
        let mut grads = crate::nn::MlpGrads::zeros_like(&stats.net);
        stats.backward_pairs(x.values(), z.values(), &w_joint, Some(&mut grads))?;
        stats.backward_pairs(x.values(), z_marg.values(), &w_marg, Some(&mut grads))?;
        adam_step(&mut stats.net, &grads, &mut opt, &hp)?;
    }

    let (x, z) = make_batch(&mut rng, 4096);
    let z_marg = shuffle_marginals(&z, &mut rng)?;
    mi_jsd(&stats, &x, &z, &z_marg)
}

/// Criterion: mi_jsd(T == 0) = -2 ln 2 exactly; a trained network on
/// independent pairs converges to within 0.15 of -2 ln 2; deterministic
/// dependent pairs score at least 0.3 higher.
pub fn mi_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();
    let two_ln2 = 2.0 * std::f64::consts::LN_2;

    // Exact constant at T == 0.
    {
        let mut rng = stream(seed, rng::streams::EVAL);
        let mut stats = StatisticsNetwork::<f64>::init(
            2,
            2,
            &NetworkSpec::new(vec![8], Activation::Tanh),
            &mut rng,
        )?;
        stats.net.layers.last_mut().unwrap().weights.fill(0.0);
        stats.net.layers.last_mut().unwrap().bias.fill(0.0);
        let x = SampleBatch::new(Array2::from_shape_fn((16, 2), |_| f64::standard_normal(&mut rng)))?;
        let z = LatentBatch::new(Array2::from_shape_fn((16, 2), |_| f64::standard_normal(&mut rng)))?;
        let z_marg = shuffle_marginals(&z, &mut rng)?;
        let mi = mi_jsd(&stats, &x, &z, &z_marg)?;
        let err = (mi + two_ln2).abs();
        results.push(CheckResult::new(
            "mi/zero-statistic-constant",
            err < 1e-6,
            format!("mi(T=0) = {mi:.9}, target {:.9}, |err| = {err:.2e}", -two_ln2),
        ));
    }

    let independent = train_mi_probe(false, seed + 1)?;
    results.push(CheckResult::new(
        "mi/independent-pairs",
        (independent + two_ln2).abs() <= 0.15,
        format!("trained MI on independent pairs {independent:.4}, target {:.4} +/- 0.15", -two_ln2),
    ));

    let dependent = train_mi_probe(true, seed + 2)?;
    results.push(CheckResult::new(
        "mi/dependent-pairs-gap",
        dependent - independent > 0.3,
        format!("dependent {dependent:.4} vs independent {independent:.4}, gap {:.4} (> 0.3 required)", dependent - independent),
    ));

    Ok(results)
}

/// Criterion: quadratic-target chains reproduce the closed-form moments;
/// r(z' = z) = 1 exactly; reversibility holds to 1e-8.
pub fn mala_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();
    let target = QuadraticTarget { dim: 2 };

    {
        let cfg = MalaConfig {
            step_size: 0.05,
            chain_length: 50_000,
            burn_in: 2_000,
            ..Default::default()
        };
        let mut rng = stream(seed, rng::streams::CHAIN_BASE);
        let run = run_mala(&target, Array2::<f64>::zeros((1, 2)), &cfg, &mut rng)?;
        let samples = run.kept_stacked();
        let n = samples.nrows() as f64;
        let mut worst_mean = 0.0f64;
        let mut worst_var = 0.0f64;
        for j in 0..2 {
            let col = samples.column(j);
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            worst_mean = worst_mean.max(mean.abs());
            worst_var = worst_var.max((var - 1.0).abs());
        }
        let passed = worst_mean < 0.05 && worst_var < 0.05;
        results.push(CheckResult::new(
            "mala/quadratic-moments",
            passed,
            format!(
                "|mean| <= {worst_mean:.4} (tol 0.05), |var - 1| <= {worst_var:.4} (tol 0.05), acceptance {:.2}",
                run.acceptance_rate
            ),
        ));
    }

    {
        let z = ndarray::array![[0.37, -1.24]];
        let log_r = log_accept_ratio(&target, &z, &z, 0.05)?;
        results.push(CheckResult::new(
            "mala/self-proposal-unit-ratio",
            log_r[0] == 0.0,
            format!("log r(z' = z) = {:?} (must be exactly 0)", log_r[0]),
        ));
    }

    {
        let mut rng = stream(seed + 1, rng::streams::CHAIN_BASE);
        let a = Array2::from_shape_fn((32, 2), |_| f64::standard_normal(&mut rng));
        let b = Array2::from_shape_fn((32, 2), |_| f64::standard_normal(&mut rng));
        let fwd = log_accept_ratio(&target, &a, &b, 0.05)?;
        let bwd = log_accept_ratio(&target, &b, &a, 0.05)?;
        let worst =
            fwd.iter().zip(bwd.iter()).map(|(f, r)| (f + r).abs()).fold(0.0f64, f64::max);
        results.push(CheckResult::new(
            "mala/reversibility",
            worst < 1e-8,
            format!("max |log r(a->b) + log r(b->a)| = {worst:.2e} (tol 1e-8)"),
        ));
    }

    Ok(results)
}

/// All suites in order; the `check` subcommand prints one line per entry.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    let mut all = gradient_suite(seed)?;
    all.extend(mi_suite(seed)?);
    all.extend(mala_suite(seed)?);
    Ok(all)
}
