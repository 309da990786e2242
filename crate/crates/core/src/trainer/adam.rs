use serde::{Deserialize, Serialize};

use crate::error::{MegError, Result};
use crate::nn::{Mlp, MlpGrads};
use crate::scalar::Scalar;

/// Adam step-size hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyperParams {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamHyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(MegError::config("adam: learning rate must be > 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(MegError::config("adam: betas must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(MegError::config("adam: epsilon must be > 0"));
        }
        Ok(())
    }
}

/// First/second-moment accumulators, one slot per parameter in the network's
/// canonical traversal order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F: Scalar> {
    pub first_moment: Vec<F>,
    pub second_moment: Vec<F>,
    pub step_count: u64,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(n_params: usize) -> Self {
        OptimizerState {
            first_moment: vec![F::zero(); n_params],
            second_moment: vec![F::zero(); n_params],
            step_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step<F: Scalar>(
    params: &mut Mlp<F>,
    grads: &MlpGrads<F>,
    state: &mut OptimizerState<F>,
    hp: &AdamHyperParams,
) -> Result<()> {
    if state.len() != params.n_params() {
        return Err(MegError::config(format!(
            "optimizer state holds {} accumulators for {} parameters",
            state.len(),
            params.n_params()
        )));
    }
    if !grads.is_finite() {
        return Err(MegError::numeric(
            "non-finite gradients reached the optimizer; training halted".to_string(),
        ));
    }
    state.step_count += 1;
    let b1 = F::from_f64(hp.beta1);
    let b2 = F::from_f64(hp.beta2);
    let one = F::one();
    let corr1 = F::from_f64(1.0 - hp.beta1.powi(state.step_count as i32));
    let corr2 = F::from_f64(1.0 - hp.beta2.powi(state.step_count as i32));
    let alpha = F::from_f64(hp.alpha);
    let eps = F::from_f64(hp.epsilon);

    for (((p, &g), m), v) in params
        .params_mut()
        .zip(grads.values())
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / corr1;
        let v_hat = *v / corr2;
        *p = *p - alpha * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
