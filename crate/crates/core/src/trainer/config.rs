use serde::{Deserialize, Serialize};

use crate::error::{MegError, Result};
use crate::nn::{Activation, NetworkSpec};
use crate::objectives::MiVariant;

fn default_lr() -> f64 {
    1e-4
}
fn default_beta1() -> f64 {
    0.5
}
fn default_beta2() -> f64 {
    0.9
}
fn default_lambda() -> f64 {
    0.1
}
fn default_energy_steps() -> u32 {
    5
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_checkpoint_every() -> u64 {
    1000
}

/// Hyperparameters of the alternating training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub penalty_coeff: f64,
    /// Energy updates per iteration before the single generator/statistics
    /// update.
    pub energy_steps: u32,
    pub batch_size: usize,
    pub total_iters: u64,
    pub latent_dim: usize,
    pub seed: u64,
    pub mi_variant: MiVariant,
    /// 0 disables intermediate checkpoints; the final one is always written.
    pub checkpoint_every: u64,
    /// 0 disables the evaluation hook.
    pub eval_every: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: default_lr(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_epsilon: default_epsilon(),
            penalty_coeff: default_lambda(),
            energy_steps: default_energy_steps(),
            batch_size: 256,
            total_iters: 10_000,
            latent_dim: 2,
            seed: 0,
            mi_variant: MiVariant::Softplus,
            checkpoint_every: default_checkpoint_every(),
            eval_every: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(MegError::config("training: learning_rate must be > 0"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(MegError::config("training: adam betas must lie in [0, 1)"));
        }
        if self.penalty_coeff < 0.0 {
            return Err(MegError::config("training: penalty_coeff must be >= 0"));
        }
        if self.energy_steps < 1 {
            return Err(MegError::config("training: energy_steps must be >= 1"));
        }
        if self.batch_size < 2 {
            return Err(MegError::config("training: batch_size must be >= 2 (the per-dimension shuffle is degenerate below that)"));
        }
        if self.latent_dim < 1 {
            return Err(MegError::config("training: latent_dim must be >= 1"));
        }
        Ok(())
    }
}

fn default_hidden() -> Vec<usize> {
    vec![128, 128]
}
fn default_activation() -> Activation {
    Activation::LeakyRelu
}

/// Architecture of one network as declared in the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig { hidden: default_hidden(), activation: default_activation() }
    }
}

impl NetworkConfig {
    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec::new(self.hidden.clone(), self.activation)
    }
}

/// Architectures for the three networks.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub energy: NetworkConfig,
    pub generator: NetworkConfig,
    pub statistics: NetworkConfig,
}
