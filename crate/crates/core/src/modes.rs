//! Discrete mode-coverage evaluation: classify generated samples into mode
//! identities, tally histograms, and compare against the data's mode
//! distribution with an empirical KL divergence.

use ndarray::Array2;

use crate::error::{MegError, Result};
use crate::nn::SampleBatch;

/// Counts of samples per discrete mode id in `[0, capacity)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeHistogram {
    counts: Vec<u64>,
    total: u64,
}

impl ModeHistogram {
    pub fn new(capacity: usize) -> Self {
        ModeHistogram { counts: vec![0; capacity], total: 0 }
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        ModeHistogram { counts, total }
    }

    pub fn record(&mut self, mode: usize) -> Result<()> {
        if mode >= self.counts.len() {
            return Err(MegError::protocol(format!(
                "mode id {mode} outside capacity {}",
                self.counts.len()
            )));
        }
        self.counts[mode] += 1;
        self.total += 1;
        Ok(())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn capacity(&self) -> usize {
        self.counts.len()
    }

    pub fn captured_modes(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Associative merge; histogram reduction order never matters.
    pub fn merge(&mut self, other: &ModeHistogram) -> Result<()> {
        if other.capacity() != self.capacity() {
            return Err(MegError::protocol("cannot merge histograms of different capacity"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }
}

/// Maps each sample to a mode id in `[0, capacity)`.
pub trait ModeClassifier {
    fn capacity(&self) -> usize;
    fn classify(&self, samples: &SampleBatch<f32>) -> Result<Vec<usize>>;
}

/// Tallies classifier outputs over a sample batch.
pub fn mode_histogram<C: ModeClassifier>(
    classifier: &C,
    samples: &SampleBatch<f32>,
    capacity: usize,
) -> Result<ModeHistogram> {
    if classifier.capacity() != capacity {
        return Err(MegError::protocol(format!(
            "classifier capacity {} does not match requested mode capacity {capacity}",
            classifier.capacity()
        )));
    }
    let mut hist = ModeHistogram::new(capacity);
    for mode in classifier.classify(samples)? {
        hist.record(mode)?;
    }
    Ok(hist)
}

/// Result of the mode-space KL computation. The divergence blows up exactly
/// when the generator puts mass on a mode the reference never hits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EmpiricalKl {
    Finite(f64),
    /// Flagged sentinel: some generated mode has zero reference mass.
    Infinite { first_offending_mode: usize },
}

impl EmpiricalKl {
    pub fn is_finite(&self) -> bool {
        matches!(self, EmpiricalKl::Finite(_))
    }

    pub fn value(&self) -> f64 {
        match self {
            EmpiricalKl::Finite(v) => *v,
            EmpiricalKl::Infinite { .. } => f64::INFINITY,
        }
    }
}

/// `KL(generated || reference)` in nats over normalized mode histograms.
/// Modes with zero generated mass contribute nothing.
pub fn empirical_kl(gen: &ModeHistogram, reference: &ModeHistogram) -> Result<EmpiricalKl> {
    if gen.capacity() != reference.capacity() {
        return Err(MegError::protocol(format!(
            "KL capacity mismatch: generated {} vs reference {}",
            gen.capacity(),
            reference.capacity()
        )));
    }
    if gen.total() == 0 || reference.total() == 0 {
        return Err(MegError::protocol("KL needs non-empty histograms on both sides"));
    }
    let gn = gen.total() as f64;
    let rn = reference.total() as f64;
    let mut kl = 0.0;
    for (mode, (&g, &r)) in gen.counts().iter().zip(reference.counts()).enumerate() {
        if g == 0 {
            continue;
        }
        if r == 0 {
            return Ok(EmpiricalKl::Infinite { first_offending_mode: mode });
        }
        let p = g as f64 / gn;
        let q = r as f64 / rn;
        kl += p * (p / q).ln();
    }
    Ok(EmpiricalKl::Finite(kl))
}

/// Nearest-centroid assignment for the synthetic 2D Gaussian layouts.
#[derive(Debug, Clone)]
pub struct NearestCentroid {
    pub centers: Vec<[f64; 2]>,
    pub sigma: f64,
    /// A sample is in-mode iff its distance to the assigned center is at most
    /// `cutoff * sigma`.
    pub cutoff: f64,
}

/// Per-sample assignment produced by [`nearest_mode_assign`].
#[derive(Debug, Clone)]
pub struct ModeAssignment {
    pub mode_ids: Vec<usize>,
    pub in_mode: Vec<bool>,
}

impl ModeAssignment {
    pub fn in_mode_fraction(&self) -> f64 {
        if self.in_mode.is_empty() {
            return 0.0;
        }
        self.in_mode.iter().filter(|&&b| b).count() as f64 / self.in_mode.len() as f64
    }
}

/// Maps each 2D sample to its nearest center (ties break to the lowest
/// index) and flags whether it lies within the cutoff radius.
pub fn nearest_mode_assign(
    samples: &Array2<f32>,
    centers: &[[f64; 2]],
    sigma: f64,
    cutoff: f64,
) -> Result<ModeAssignment> {
    if centers.is_empty() {
        return Err(MegError::config("nearest-mode assignment needs at least one center"));
    }
    if !(sigma > 0.0) || !(cutoff > 0.0) {
        return Err(MegError::config("nearest-mode assignment needs sigma > 0 and cutoff > 0"));
    }
    if samples.ncols() != 2 {
        return Err(MegError::config("nearest-mode assignment expects 2D samples"));
    }
    let radius2 = (cutoff * sigma) * (cutoff * sigma);
    let mut mode_ids = Vec::with_capacity(samples.nrows());
    let mut in_mode = Vec::with_capacity(samples.nrows());
    for row in samples.rows() {
        let (x, y) = (row[0] as f64, row[1] as f64);
        let mut best = 0usize;
        let mut best_d2 = f64::INFINITY;
        for (i, c) in centers.iter().enumerate() {
            let d2 = (x - c[0]).powi(2) + (y - c[1]).powi(2);
            if d2 < best_d2 {
                best_d2 = d2;
                best = i;
            }
        }
        mode_ids.push(best);
        in_mode.push(best_d2 <= radius2);
    }
    Ok(ModeAssignment { mode_ids, in_mode })
}

impl ModeClassifier for NearestCentroid {
    fn capacity(&self) -> usize {
        self.centers.len()
    }

    fn classify(&self, samples: &SampleBatch<f32>) -> Result<Vec<usize>> {
        Ok(nearest_mode_assign(samples.values(), &self.centers, self.sigma, self.cutoff)?.mode_ids)
    }
}

/// Combines per-channel digit predictions into one positional base-10 code:
/// channel 0 is the most significant digit.
pub fn stacked_mode_id(digits: &[u8]) -> usize {
    digits.iter().fold(0usize, |acc, &d| acc * 10 + d as usize)
}

/// Nearest-template digit classifier over channel-stacked images. Templates
/// are the per-class mean images of the classifier's training source; with
/// the synthetic glyph source this is exact by construction.
#[derive(Debug, Clone)]
pub struct StackedTemplateClassifier {
    /// `10 x (h*w)` mean image per digit class.
    pub templates: Array2<f32>,
    pub stacks: usize,
}

impl StackedTemplateClassifier {
    pub fn new(templates: Array2<f32>, stacks: usize) -> Result<Self> {
        if templates.nrows() != 10 {
            return Err(MegError::config("digit templates must cover classes 0-9"));
        }
        if stacks == 0 {
            return Err(MegError::config("stacks must be >= 1"));
        }
        Ok(StackedTemplateClassifier { templates, stacks })
    }

    fn channel_digit(&self, channel: &[f32]) -> u8 {
        let mut best = 0u8;
        let mut best_d = f32::INFINITY;
        for class in 0..10 {
            let t = self.templates.row(class);
            let mut d = 0.0f32;
            for (a, b) in channel.iter().zip(t.iter()) {
                let diff = a - b;
                d += diff * diff;
            }
            if d < best_d {
                best_d = d;
                best = class as u8;
            }
        }
        best
    }
}

impl ModeClassifier for StackedTemplateClassifier {
    fn capacity(&self) -> usize {
        10usize.pow(self.stacks as u32)
    }

    fn classify(&self, samples: &SampleBatch<f32>) -> Result<Vec<usize>> {
        let pixels = self.templates.ncols();
        if samples.dim() != self.stacks * pixels {
            return Err(MegError::protocol(format!(
                "stacked sample width {} does not match {} channels of {} pixels",
                samples.dim(),
                self.stacks,
                pixels
            )));
        }
        let mut ids = Vec::with_capacity(samples.len());
        for row in samples.values().rows() {
            let slice = row.as_slice().expect("contiguous row");
            let digits: Vec<u8> =
                (0..self.stacks).map(|c| self.channel_digit(&slice[c * pixels..(c + 1) * pixels])).collect();
            ids.push(stacked_mode_id(&digits));
        }
        Ok(ids)
    }
}
