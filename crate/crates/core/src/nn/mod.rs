//! The three parametric networks and their gradient plumbing.
//!
//! Everything is a plain MLP evaluated batch-wise on `ndarray` matrices.
//! Besides the usual forward/reverse passes, [`Mlp`] implements a
//! forward-over-reverse second-order pass ([`Mlp::jvp_param_backward`]) which
//! is what the zero-centered gradient penalty needs to push `||grad_x E||^2`
//! gradients into the energy parameters exactly.

mod activation;
mod batch;
mod mlp;
mod networks;

pub use activation::Activation;
pub use batch::{LatentBatch, LatentPrior, SampleBatch};
pub use mlp::{Dense, ForwardCache, Mlp, MlpGrads};
pub use networks::{grad_energy_latent, EnergyFunction, Generator, NetworkSpec, StatisticsNetwork};

use crate::scalar::Scalar;
use sha2::{Digest, Sha256};

/// Hex SHA-256 over the little-endian bytes of every parameter, in traversal
/// order. Used by trainer invariants to prove an update touched nothing else.
pub fn param_hash<F: Scalar>(mlp: &Mlp<F>) -> String {
    let mut hasher = Sha256::new();
    for layer in &mlp.layers {
        for &w in layer.weights.iter() {
            hasher.update(w.to_f64().to_le_bytes());
        }
        for &b in layer.bias.iter() {
            hasher.update(b.to_f64().to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}
