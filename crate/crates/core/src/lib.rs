//! Energy-based generative modeling with an amortized maximum-entropy generator.
//!
//! The crate trains an unnormalized density `exp(-E(x))` adversarially against a
//! deterministic generator whose output entropy is kept high through a
//! Jensen-Shannon mutual-information lower bound, then exploits the learned
//! energy three ways: latent-space MALA refinement of generator samples,
//! normalized 2D density grids, and score-norm anomaly detection.
//!
//! Module map:
//! - [`nn`] — the three parametric networks, batch containers, latent prior,
//!   and gradient plumbing (including the second-order pass the gradient
//!   penalty needs).
//! - [`objectives`] — every loss: the JSD MI estimator, energy loss with
//!   zero-centered gradient penalty, generator and statistics losses, and the
//!   diagnostic score-matching objective.
//! - [`trainer`] — the alternating-update training loop, Adam, checkpoints,
//!   metrics CSV.
//! - [`sampler`] — Metropolis-adjusted Langevin chains over the latent space
//!   (or directly in data space).
//! - [`density`], [`modes`], [`anomaly`], [`comparison`] — evaluation suites.
//! - [`data`] — synthetic 2D distributions, the stacked-digit builder, KDD99
//!   ingestion, dataset archives.
//! - [`verify`] — the self-check suites behind the `check` CLI subcommand.






pub mod anomaly;
pub mod comparison;
pub mod config;
pub mod data;
pub mod density;
pub mod error;
pub mod manifest;
pub mod modes;
pub mod nn;
pub mod objectives;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod trainer;
pub mod verify;


pub use error::{MegError, Result};
pub use scalar::Scalar;
