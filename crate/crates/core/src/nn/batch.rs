use ndarray::Array2;
use rand::Rng;

use crate::error::{MegError, Result};
use crate::scalar::Scalar;

fn check_finite<F: Scalar>(values: &Array2<F>, what: &str) -> Result<()> {
    if values.nrows() == 0 || values.ncols() == 0 {
        return Err(MegError::config(format!(
            "{what} must be non-empty, got shape {}x{}",
            values.nrows(),
            values.ncols()
        )));
    }
    for (idx, v) in values.iter().enumerate() {
        if !v.is_finite() {
            let row = idx / values.ncols();
            return Err(MegError::numeric(format!(
                "{what} contains non-finite entry at row {row}"
            )));
        }
    }
    Ok(())
}

/// A minibatch of data-space points, one per row (`m x d`).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch<F: Scalar>(Array2<F>);

impl<F: Scalar> SampleBatch<F> {
    pub fn new(values: Array2<F>) -> Result<Self> {
        check_finite(&values, "sample batch")?;
        Ok(SampleBatch(values))
    }

    /// Caller guarantees finiteness (hot paths where the producer just
    /// checked, e.g. a generator forward that validated its output).
    pub(crate) fn new_unchecked(values: Array2<F>) -> Self {
        SampleBatch(values)
    }

    pub fn values(&self) -> &Array2<F> {
        &self.0
    }

    pub fn into_values(self) -> Array2<F> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }
}

/// A minibatch of latent points, one per row (`m x k`).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch<F: Scalar>(Array2<F>);

impl<F: Scalar> LatentBatch<F> {
    pub fn new(values: Array2<F>) -> Result<Self> {
        check_finite(&values, "latent batch")?;
        Ok(LatentBatch(values))
    }

    pub fn values(&self) -> &Array2<F> {
        &self.0
    }

    pub fn into_values(self) -> Array2<F> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }
}

/// Standard normal prior over the latent space, `N(0, I_k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentPrior {
    pub dim: usize,
}

impl LatentPrior {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(MegError::config("latent dimension must be >= 1"));
        }
        Ok(LatentPrior { dim })
    }

    pub fn sample<F: Scalar, R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<LatentBatch<F>> {
        if m == 0 {
            return Err(MegError::config("latent batch size must be >= 1"));
        }
        let values = Array2::from_shape_fn((m, self.dim), |_| F::standard_normal(rng));
        Ok(LatentBatch(values))
    }

    /// Log density up to the `-k/2 log(2 pi)` constant: `-||z||^2 / 2` per row.
    pub fn log_density_unnormalized<F: Scalar>(&self, z: &Array2<F>) -> ndarray::Array1<F> {
        z.rows()
            .into_iter()
            .map(|row| {
                let sq: F = row.iter().map(|&v| v * v).sum();
                -sq / F::from_f64(2.0)
            })
            .collect()
    }
}
