use serde::{Deserialize, Serialize};

use crate::scalar::{sigmoid, softplus, Scalar};

/// Elementwise nonlinearity of a dense layer.
///
/// The second derivative is needed by the gradient-penalty pass; for the
/// piecewise-linear activations it is zero almost everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    /// Slope 0.2 on the negative side.
    LeakyRelu,
    Tanh,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply<F: Scalar>(self, x: F) -> F {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(F::zero()),
            Activation::LeakyRelu => {
                if x > F::zero() {
                    x
                } else {
                    F::from_f64(0.2) * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
        }
    }

    #[inline]
    pub fn derivative<F: Scalar>(self, x: F) -> F {
        match self {
            Activation::Identity => F::one(),
            Activation::Relu => {
                if x > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::LeakyRelu => {
                if x > F::zero() {
                    F::one()
                } else {
                    F::from_f64(0.2)
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                F::one() - t * t
            }
            Activation::Softplus => sigmoid(x),
        }
    }

    #[inline]
    pub fn second_derivative<F: Scalar>(self, x: F) -> F {
        match self {
            Activation::Identity | Activation::Relu | Activation::LeakyRelu => F::zero(),
            Activation::Tanh => {
                let t = x.tanh();
                F::from_f64(-2.0) * t * (F::one() - t * t)
            }
            Activation::Softplus => {
                let s = sigmoid(x);
                s * (F::one() - s)
            }
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "identity" | "linear" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "leaky_relu" | "lrelu" => Some(Activation::LeakyRelu),
            "tanh" => Some(Activation::Tanh),
            "softplus" => Some(Activation::Softplus),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite differences confirm both derivative orders away from the
    /// relu kinks.
    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5f64;
        for act in [
            Activation::Identity,
            Activation::Relu,
            Activation::LeakyRelu,
            Activation::Tanh,
            Activation::Softplus,
        ] {
            for &x in &[-1.7, -0.4, 0.3, 1.1, 2.9] {
                let fd1 = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!(
                    (fd1 - act.derivative(x)).abs() < 1e-8,
                    "{act:?} first derivative at {x}"
                );
                let fd2 = (act.apply(x + h) - 2.0 * act.apply(x) + act.apply(x - h)) / (h * h);
                assert!(
                    (fd2 - act.second_derivative(x)).abs() < 1e-4,
                    "{act:?} second derivative at {x}"
                );
            }
        }
    }
}
