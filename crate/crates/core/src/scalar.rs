use ndarray::ScalarOperand;
use num_traits::{Float, NumAssign};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

/// Floating-point element type for networks and batches.
///
/// Training runs in `f32`; the gradient-check and oracle suites instantiate
/// the same code at `f64` so finite-difference comparisons stay tight.
pub trait Scalar:
    Float + NumAssign + ScalarOperand + std::iter::Sum + std::fmt::Display + std::fmt::Debug + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// One standard-normal draw.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One draw from U(-half_width, half_width).
    fn uniform_symmetric<R: Rng + ?Sized>(rng: &mut R, half_width: Self) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    #[inline]
    fn uniform_symmetric<R: Rng + ?Sized>(rng: &mut R, half_width: Self) -> Self {
        Uniform::new(-half_width, half_width).expect("valid range").sample(rng)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }

    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    #[inline]
    fn uniform_symmetric<R: Rng + ?Sized>(rng: &mut R, half_width: Self) -> Self {
        Uniform::new(-half_width, half_width).expect("valid range").sample(rng)
    }
}

/// Numerically stable softplus: `sp(a) = max(a, 0) + log1p(exp(-|a|))`.
///
/// Exact for the full finite range; no overflow for |a| up to 1e4 and beyond.
#[inline]
pub fn softplus<F: Scalar>(a: F) -> F {
    a.max(F::zero()) + (-a.abs()).exp().ln_1p()
}

/// Logistic sigmoid computed through the stable softplus branch.
#[inline]
pub fn sigmoid<F: Scalar>(a: F) -> F {
    if a >= F::zero() {
        F::one() / (F::one() + (-a).exp())
    } else {
        let e = a.exp();
        e / (F::one() + e)
    }
}
