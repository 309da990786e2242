use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::activation::Activation;
use crate::error::{MegError, Result};
use crate::scalar::Scalar;

/// One dense layer: `a_out = act(a_in . W^T + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F: Scalar> {
    /// `out x in`.
    pub weights: Array2<F>,
    pub bias: Array1<F>,
    pub activation: Activation,
}

impl<F: Scalar> Dense<F> {
    fn affine(&self, input: &Array2<F>) -> Array2<F> {
        input.dot(&self.weights.t()) + &self.bias
    }
}

/// Multilayer perceptron; the final layer is always linear so scalar heads
/// stay unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F: Scalar> {
    pub layers: Vec<Dense<F>>,
}

/// Per-layer parameter gradients, shaped exactly like the network.
#[derive(Debug, Clone)]
pub struct MlpGrads<F: Scalar> {
    pub weights: Vec<Array2<F>>,
    pub bias: Vec<Array1<F>>,
}

/// Forward-pass intermediates needed by the reverse pass: the input to each
/// layer and each layer's pre-activation.
pub struct ForwardCache<F: Scalar> {
    inputs: Vec<Array2<F>>,
    pre_activations: Vec<Array2<F>>,
}

impl<F: Scalar> ForwardCache<F> {
    pub fn output(&self) -> Array2<F> {
        let last = self.pre_activations.last().expect("non-empty network");
        // Final layer is linear; its pre-activation is the output.
        last.clone()
    }
}

impl<F: Scalar> Mlp<F> {
    /// Fan-in-scaled uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for weights and biases alike.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(MegError::config("network layer widths must be >= 1"));
        }
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(output_dim);

        let n_layers = dims.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = F::from_f64(1.0 / (fan_in as f64).sqrt());
            let weights =
                Array2::from_shape_fn((fan_out, fan_in), |_| F::uniform_symmetric(rng, bound));
            let bias = Array1::from_shape_fn(fan_out, |_| F::uniform_symmetric(rng, bound));
            let act = if l + 1 == n_layers { Activation::Identity } else { activation };
            layers.push(Dense { weights, bias, activation: act });
        }
        Ok(Mlp { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().expect("non-empty network").weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty network").weights.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, input: &Array2<F>) -> Array2<F> {
        let mut a = input.clone();
        for layer in &self.layers {
            let z = layer.affine(&a);
            a = z.mapv(|v| layer.activation.apply(v));
        }
        a
    }

    pub fn forward_cached(&self, input: &Array2<F>) -> ForwardCache<F> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut a = input.clone();
        for layer in &self.layers {
            inputs.push(a.clone());
            let z = layer.affine(&a);
            a = z.mapv(|v| layer.activation.apply(v));
            pre_activations.push(z);
        }
        ForwardCache { inputs, pre_activations }
    }

    /// Reverse pass. `grad_output` is dL/d(output), `m x out`. Accumulates
    /// parameter gradients into `grads` (when given) and returns dL/d(input).
    pub fn backward(
        &self,
        cache: &ForwardCache<F>,
        grad_output: &Array2<F>,
        mut grads: Option<&mut MlpGrads<F>>,
    ) -> Array2<F> {
        let mut grad_a = grad_output.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre_activations[l];
            let mut grad_z = grad_a;
            grad_z.zip_mut_with(z, |g, &zv| *g *= layer.activation.derivative(zv));
            if let Some(grads) = grads.as_deref_mut() {
                grads.weights[l] = &grads.weights[l] + &grad_z.t().dot(&cache.inputs[l]);
                grads.bias[l] = &grads.bias[l] + &grad_z.sum_axis(Axis(0));
            }
            grad_a = grad_z.dot(&layer.weights);
        }
        grad_a
    }

    /// Gradient of the scalar-head output w.r.t. the input, one row per batch
    /// row. Only valid for networks with `output_dim() == 1`.
    pub fn input_gradient(&self, input: &Array2<F>) -> Array2<F> {
        debug_assert_eq!(self.output_dim(), 1);
        let cache = self.forward_cached(input);
        let ones = Array2::ones((input.nrows(), 1));
        self.backward(&cache, &ones, None)
    }

    /// Parameter gradient of `sum_i w_i * <grad_x f(x_i), v_i>` for a
    /// scalar-head network `f`, computed by reverse-differentiating the
    /// forward-mode directional derivative along `v`.
    ///
    /// With `v_i = grad_x f(x_i)` and `w_i = 2/m` this is exactly the
    /// parameter gradient of the mean squared score norm
    /// `(1/m) sum_i ||grad_x f(x_i)||^2`, since that objective is quadratic in
    /// the score.
    pub fn jvp_param_backward(
        &self,
        input: &Array2<F>,
        direction: &Array2<F>,
        row_weights: &Array1<F>,
        grads: &mut MlpGrads<F>,
    ) {
        debug_assert_eq!(self.output_dim(), 1);
        debug_assert_eq!(input.dim(), direction.dim());
        debug_assert_eq!(input.nrows(), row_weights.len());

        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut dinputs = Vec::with_capacity(n_layers);
        let mut zs = Vec::with_capacity(n_layers);
        let mut zdots = Vec::with_capacity(n_layers);

        // Forward sweep carrying (value, directional-derivative) pairs.
        let mut a = input.clone();
        let mut adot = direction.clone();
        for layer in &self.layers {
            inputs.push(a.clone());
            dinputs.push(adot.clone());
            let z = layer.affine(&a);
            let zdot = adot.dot(&layer.weights.t());
            a = z.mapv(|v| layer.activation.apply(v));
            let mut next_adot = zdot.clone();
            next_adot.zip_mut_with(&z, |d, &zv| *d *= layer.activation.derivative(zv));
            adot = next_adot;
            zs.push(z);
            zdots.push(zdot);
        }

        // Reverse sweep over the extended graph. grad_a tracks d(obj)/d a_l,
        // grad_adot tracks d(obj)/d adot_l.
        let m = input.nrows();
        let mut grad_a = Array2::zeros((m, 1));
        let mut grad_adot =
            Array2::from_shape_fn((m, 1), |(i, _)| row_weights[i]);

        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &zs[l];
            let zdot = &zdots[l];
            // a = act(z), adot = act'(z) * zdot
            let mut grad_z = Array2::zeros(z.raw_dim());
            ndarray::Zip::from(&mut grad_z)
                .and(&grad_a)
                .and(&grad_adot)
                .and(z)
                .and(zdot)
                .for_each(|gz, &ga, &gad, &zv, &zd| {
                    *gz = ga * layer.activation.derivative(zv)
                        + gad * layer.activation.second_derivative(zv) * zd;
                });
            let mut grad_zdot = grad_adot;
            grad_zdot.zip_mut_with(z, |g, &zv| *g *= layer.activation.derivative(zv));

            grads.weights[l] = &grads.weights[l]
                + &(grad_z.t().dot(&inputs[l]) + grad_zdot.t().dot(&dinputs[l]));
            grads.bias[l] = &grads.bias[l] + &grad_z.sum_axis(Axis(0));

            grad_a = grad_z.dot(&layer.weights);
            grad_adot = grad_zdot.dot(&layer.weights);
        }
    }

    /// Flat view over all parameters in a fixed traversal order (weights then
    /// bias, layer by layer). Optimizers and serialization both rely on it.
    pub fn params(&self) -> impl Iterator<Item = &F> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut F> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }
}

impl<F: Scalar> MlpGrads<F> {
    pub fn zeros_like(mlp: &Mlp<F>) -> Self {
        MlpGrads {
            weights: mlp.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            bias: mlp.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &F> {
        self.weights
            .iter()
            .zip(self.bias.iter())
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }
}
