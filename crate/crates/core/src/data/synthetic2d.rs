use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MegError, Result};
use crate::nn::SampleBatch;
use crate::scalar::Scalar;

/// The three 2D toy distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyFamily {
    EightGaussians,
    TwentyFiveGaussians,
    SwissRoll,
}

impl ToyFamily {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "8gaussians" => Some(ToyFamily::EightGaussians),
            "25gaussians" => Some(ToyFamily::TwentyFiveGaussians),
            "swissroll" => Some(ToyFamily::SwissRoll),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ToyFamily::EightGaussians => "8gaussians",
            ToyFamily::TwentyFiveGaussians => "25gaussians",
            ToyFamily::SwissRoll => "swissroll",
        }
    }
}

/// Geometry of a toy dataset. Defaults: 8 centers on a radius-2 circle with
/// sigma 0.02; a 5x5 grid on {-2,-1,0,1,2}^2 scaled by 2 with sigma 0.05;
/// a spiral scaled into the [-4, 4] window with additive noise 0.25.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Synthetic2DSpec {
    pub family: ToyFamily,
    pub sigma: f64,
    pub scale: f64,
}

impl Synthetic2DSpec {
    pub fn standard(family: ToyFamily) -> Self {
        match family {
            ToyFamily::EightGaussians => Synthetic2DSpec { family, sigma: 0.02, scale: 2.0 },
            ToyFamily::TwentyFiveGaussians => Synthetic2DSpec { family, sigma: 0.05, scale: 2.0 },
            ToyFamily::SwissRoll => Synthetic2DSpec { family, sigma: 0.25, scale: 1.0 },
        }
    }

    /// Mode centers for the Gaussian families; the swiss roll has none.
    pub fn centers(&self) -> Vec<[f64; 2]> {
        match self.family {
            ToyFamily::EightGaussians => (0..8)
                .map(|i| {
                    let angle = 2.0 * std::f64::consts::PI * i as f64 / 8.0;
                    [self.scale * angle.cos(), self.scale * angle.sin()]
                })
                .collect(),
            ToyFamily::TwentyFiveGaussians => {
                let mut centers = Vec::with_capacity(25);
                for gx in -2i64..=2 {
                    for gy in -2i64..=2 {
                        centers.push([self.scale * gx as f64, self.scale * gy as f64]);
                    }
                }
                centers
            }
            ToyFamily::SwissRoll => Vec::new(),
        }
    }
}

/// i.i.d. draws: Gaussian families mix their components uniformly; the swiss
/// roll is the parameterized spiral plus isotropic noise.
pub fn synthetic2d<F: Scalar, R: Rng + ?Sized>(
    spec: &Synthetic2DSpec,
    n: usize,
    rng: &mut R,
) -> Result<SampleBatch<F>> {
    if n == 0 {
        return Err(MegError::config("synthetic dataset size must be >= 1"));
    }
    let mut out = Array2::<F>::zeros((n, 2));
    match spec.family {
        ToyFamily::EightGaussians | ToyFamily::TwentyFiveGaussians => {
            let centers = spec.centers();
            for i in 0..n {
                let c = centers[rng.random_range(0..centers.len())];
                out[[i, 0]] = F::from_f64(c[0] + spec.sigma * f64::standard_normal(rng));
                out[[i, 1]] = F::from_f64(c[1] + spec.sigma * f64::standard_normal(rng));
            }
        }
        ToyFamily::SwissRoll => {
            // t in [1.5 pi, 4.5 pi]; the raw spiral reaches radius 4.5 pi,
            // rescaled to sit inside the default [-4, 4] evaluation window.
            let fit = 3.8 / (4.5 * std::f64::consts::PI);
            for i in 0..n {
                let u: f64 = rng.random();
                let t = 1.5 * std::f64::consts::PI * (1.0 + 2.0 * u);
                let x = (t * t.cos() + spec.sigma * f64::standard_normal(rng)) * fit * spec.scale;
                let y = (t * t.sin() + spec.sigma * f64::standard_normal(rng)) * fit * spec.scale;
                out[[i, 0]] = F::from_f64(x);
                out[[i, 1]] = F::from_f64(y);
            }
        }
    }
    SampleBatch::new(out)
}
