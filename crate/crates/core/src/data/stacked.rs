//! Channel-stacked digit datasets for mode-coverage evaluation.
//!
//! Each sample stacks `stacks` independently drawn digit images; the mode
//! identity is the positional base-10 code of the digit labels (channel 0
//! most significant), so a 3-stack build has 10^3 modes.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::archive::{save_archive, ArrayArchive};
use crate::error::{MegError, Result};
use crate::modes::stacked_mode_id;
use crate::rng;

/// Build parameters. Mode capacity is `10^stacks`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackedMnistSpec {
    pub stacks: usize,
    pub train_count: usize,
    pub eval_count: usize,
}

impl StackedMnistSpec {
    pub fn mode_capacity(&self) -> usize {
        10usize.pow(self.stacks as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stacks == 3 || self.stacks == 4) {
            return Err(MegError::config("stacks must be 3 or 4"));
        }
        if self.train_count == 0 || self.eval_count == 0 {
            return Err(MegError::config("stacked build counts must be >= 1"));
        }
        Ok(())
    }
}

/// Source pool of single-digit images.
pub trait DigitSource {
    /// `n x (h*w)` pixel intensities in [0, 1].
    fn images(&self) -> &Array2<f32>;
    fn labels(&self) -> &[u8];
    fn image_shape(&self) -> (usize, usize);

    /// Per-class mean images, `10 x (h*w)`; the template classifier's model.
    fn class_templates(&self) -> Array2<f32> {
        let pixels = self.images().ncols();
        let mut sums = Array2::<f32>::zeros((10, pixels));
        let mut counts = [0usize; 10];
        for (row, &label) in self.images().rows().into_iter().zip(self.labels()) {
            counts[label as usize] += 1;
            let mut t = sums.row_mut(label as usize);
            t += &row;
        }
        for c in 0..10 {
            if counts[c] > 0 {
                let mut t = sums.row_mut(c);
                t /= counts[c] as f32;
            }
        }
        sums
    }
}

/// Deterministic procedural glyphs: class `c` lights column `c mod w` plus a
/// class-keyed row band, with small per-image intensity jitter. Classes are
/// far apart in L2, so the template classifier is exact on this source.
#[derive(Debug, Clone)]
pub struct SyntheticDigitSource {
    images: Array2<f32>,
    labels: Vec<u8>,
    shape: (usize, usize),
}

impl SyntheticDigitSource {
    pub fn new(height: usize, width: usize, per_class: usize, seed: u64) -> Result<Self> {
        if height < 2 || width < 10 {
            return Err(MegError::config("synthetic digits need height >= 2 and width >= 10"));
        }
        if per_class == 0 {
            return Err(MegError::config("per_class must be >= 1"));
        }
        let mut rng = rng::stream(seed, rng::streams::DATA_BUILD);
        let n = 10 * per_class;
        let mut images = Array2::<f32>::zeros((n, height * width));
        let mut labels = Vec::with_capacity(n);
        for class in 0..10u8 {
            for i in 0..per_class {
                let row_idx = class as usize * per_class + i;
                let gain = 0.85 + 0.15 * rng.random::<f32>();
                let col = class as usize % width;
                let band = (class as usize * height) / 10;
                for r in 0..height {
                    images[[row_idx, r * width + col]] = gain;
                }
                for c in 0..width {
                    images[[row_idx, band * width + c]] = gain;
                }
                // Light pixel noise so images within a class differ.
                for _ in 0..(height * width / 20) {
                    let p = rng.random_range(0..height * width);
                    images[[row_idx, p]] =
                        (images[[row_idx, p]] + 0.1 * rng.random::<f32>()).min(1.0);
                }
                labels.push(class);
            }
        }
        Ok(SyntheticDigitSource { images, labels, shape: (height, width) })
    }
}

impl DigitSource for SyntheticDigitSource {
    fn images(&self) -> &Array2<f32> {
        &self.images
    }

    fn labels(&self) -> &[u8] {
        &self.labels
    }

    fn image_shape(&self) -> (usize, usize) {
        self.shape
    }
}

/// MNIST-format IDX reader (images magic 2051, labels magic 2049).
#[derive(Debug, Clone)]
pub struct IdxDigitSource {
    images: Array2<f32>,
    labels: Vec<u8>,
    shape: (usize, usize),
}

impl IdxDigitSource {
    pub fn load(images_path: &Path, labels_path: &Path) -> Result<Self> {
        let mut img_bytes = Vec::new();
        File::open(images_path)
            .map_err(|e| MegError::Ingestion(format!("cannot open {images_path:?}: {e}")))?
            .read_to_end(&mut img_bytes)?;
        let mut label_bytes = Vec::new();
        File::open(labels_path)
            .map_err(|e| MegError::Ingestion(format!("cannot open {labels_path:?}: {e}")))?
            .read_to_end(&mut label_bytes)?;

        let be32 = |b: &[u8], off: usize| -> Result<u32> {
            b.get(off..off + 4)
                .map(|s| u32::from_be_bytes(s.try_into().unwrap()))
                .ok_or_else(|| MegError::Ingestion("IDX header truncated".to_string()))
        };
        if be32(&img_bytes, 0)? != 2051 {
            return Err(MegError::Ingestion("not an IDX image file (magic != 2051)".to_string()));
        }
        if be32(&label_bytes, 0)? != 2049 {
            return Err(MegError::Ingestion("not an IDX label file (magic != 2049)".to_string()));
        }
        let n = be32(&img_bytes, 4)? as usize;
        let h = be32(&img_bytes, 8)? as usize;
        let w = be32(&img_bytes, 12)? as usize;
        if be32(&label_bytes, 4)? as usize != n {
            return Err(MegError::Ingestion("image/label counts differ".to_string()));
        }
        let pixels = img_bytes
            .get(16..16 + n * h * w)
            .ok_or_else(|| MegError::Ingestion("IDX image payload truncated".to_string()))?;
        let labels = label_bytes
            .get(8..8 + n)
            .ok_or_else(|| MegError::Ingestion("IDX label payload truncated".to_string()))?
            .to_vec();
        if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
            return Err(MegError::Ingestion(format!("digit label {bad} out of range")));
        }
        let images = Array2::from_shape_vec(
            (n, h * w),
            pixels.iter().map(|&p| p as f32 / 255.0).collect(),
        )
        .expect("shape matches payload");
        Ok(IdxDigitSource { images, labels, shape: (h, w) })
    }
}

impl DigitSource for IdxDigitSource {
    fn images(&self) -> &Array2<f32> {
        &self.images
    }

    fn labels(&self) -> &[u8] {
        &self.labels
    }

    fn image_shape(&self) -> (usize, usize) {
        self.shape
    }
}

/// A persisted stacked build.
#[derive(Debug)]
pub struct StackedDataset {
    pub spec: StackedMnistSpec,
    /// `count x (stacks * h * w)` in [0, 1].
    pub train_images: Array2<f32>,
    pub train_modes: Vec<u32>,
    pub eval_images: Array2<f32>,
    pub eval_modes: Vec<u32>,
    pub image_shape: (usize, usize),
}

fn draw_split<S: DigitSource, R: Rng + ?Sized>(
    spec: &StackedMnistSpec,
    source: &S,
    count: usize,
    rng: &mut R,
) -> (Array2<f32>, Vec<u32>) {
    let pixels = source.images().ncols();
    let n_source = source.images().nrows();
    let mut images = Array2::<f32>::zeros((count, spec.stacks * pixels));
    let mut modes = Vec::with_capacity(count);
    let mut digits = vec![0u8; spec.stacks];
    for i in 0..count {
        for c in 0..spec.stacks {
            let pick = rng.random_range(0..n_source);
            digits[c] = source.labels()[pick];
            images
                .row_mut(i)
                .slice_mut(ndarray::s![c * pixels..(c + 1) * pixels])
                .assign(&source.images().row(pick));
        }
        modes.push(stacked_mode_id(&digits) as u32);
    }
    (images, modes)
}

/// Draws and fixes the train/eval splits, persisting both as u8 archives
/// (pixels quantized to 1/255) under `out_dir` when given.
pub fn build_stacked_mnist<S: DigitSource>(
    spec: &StackedMnistSpec,
    source: &S,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<StackedDataset> {
    spec.validate()?;
    if source.images().nrows() == 0 {
        return Err(MegError::Ingestion("digit source is empty".to_string()));
    }
    let mut rng = rng::stream(seed, rng::streams::DATA_BUILD);
    let (train_images, train_modes) = draw_split(spec, source, spec.train_count, &mut rng);
    let (eval_images, eval_modes) = draw_split(spec, source, spec.eval_count, &mut rng);

    if let Some(dir) = out_dir {
        let spec_json = serde_json::to_value(spec).expect("spec serializes");
        let quantize = |a: &Array2<f32>| a.mapv(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
        save_archive(
            dir,
            "stacked-train",
            &ArrayArchive::U8 { data: quantize(&train_images), labels: Some(train_modes.clone()) },
            spec_json.clone(),
            seed,
        )?;
        save_archive(
            dir,
            "stacked-eval",
            &ArrayArchive::U8 { data: quantize(&eval_images), labels: Some(eval_modes.clone()) },
            spec_json,
            seed,
        )?;
    }

    Ok(StackedDataset {
        spec: *spec,
        train_images,
        train_modes,
        eval_images,
        eval_modes,
        image_shape: source.image_shape(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_archive;
    use crate::modes::{ModeClassifier, StackedTemplateClassifier};
    use crate::nn::SampleBatch;

    fn spec3(train: usize, eval: usize) -> StackedMnistSpec {
        StackedMnistSpec { stacks: 3, train_count: train, eval_count: eval }
    }

    #[test]
    fn persisted_sizes_match_exactly() {
        let source = SyntheticDigitSource::new(10, 10, 20, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ds = build_stacked_mnist(&spec3(500, 200), &source, 7, Some(dir.path())).unwrap();
        assert_eq!(ds.train_images.nrows(), 500);
        assert_eq!(ds.eval_images.nrows(), 200);
        let (train, manifest) = load_archive(dir.path(), "stacked-train").unwrap();
        assert_eq!(train.rows(), 500);
        assert_eq!(train.cols(), 300);
        assert_eq!(manifest.seed, 7);
        let (eval, _) = load_archive(dir.path(), "stacked-eval").unwrap();
        assert_eq!(eval.rows(), 200);
    }

    #[test]
    fn mode_capacity_is_ten_to_the_stacks() {
        assert_eq!(spec3(1, 1).mode_capacity(), 1000);
        assert_eq!(
            StackedMnistSpec { stacks: 4, train_count: 1, eval_count: 1 }.mode_capacity(),
            10_000
        );
    }

    #[test]
    fn mode_ids_are_bijective_with_digit_tuples() {
        let source = SyntheticDigitSource::new(10, 10, 5, 1).unwrap();
        let ds = build_stacked_mnist(&spec3(2000, 10), &source, 3, None).unwrap();
        // Recover digits from each mode id and verify the classifier agrees.
        let clf = StackedTemplateClassifier::new(source.class_templates(), 3).unwrap();
        let batch = SampleBatch::new(ds.train_images.clone()).unwrap();
        let predicted = clf.classify(&batch).unwrap();
        for (i, &m) in ds.train_modes.iter().enumerate() {
            assert!(m < 1000);
            assert_eq!(predicted[i], m as usize, "classifier disagrees at row {i}");
        }
    }

    #[test]
    fn mode_frequencies_are_uniform_within_tolerance() {
        // Chi-squared over 10^3 modes at 1e5 samples; dof = 999, the 1%
        // critical value is ~1106.
        let source = SyntheticDigitSource::new(10, 10, 10, 2).unwrap();
        let ds = build_stacked_mnist(&spec3(100_000, 10), &source, 5, None).unwrap();
        let mut counts = vec![0u64; 1000];
        for &m in &ds.train_modes {
            counts[m as usize] += 1;
        }
        let expected = 100_000.0 / 1000.0;
        let stat: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(stat < 1106.0, "chi-squared {stat} exceeds the 1% critical value");
    }

    #[test]
    fn builds_are_pure_functions_of_spec_and_seed() {
        let source = SyntheticDigitSource::new(10, 10, 5, 3).unwrap();
        let a = build_stacked_mnist(&spec3(100, 50), &source, 11, None).unwrap();
        let b = build_stacked_mnist(&spec3(100, 50), &source, 11, None).unwrap();
        assert_eq!(a.train_images, b.train_images);
        assert_eq!(a.eval_modes, b.eval_modes);
    }

    #[test]
    fn idx_loader_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");
        std::fs::write(&img, [0u8; 32]).unwrap();
        std::fs::write(&lbl, [0u8; 16]).unwrap();
        assert!(matches!(
            IdxDigitSource::load(&img, &lbl),
            Err(MegError::Ingestion(_))
        ));
    }

    #[test]
    fn idx_loader_roundtrip() {
        // Hand-assembled 2-image IDX pair.
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");
        let mut ib: Vec<u8> = Vec::new();
        ib.extend_from_slice(&2051u32.to_be_bytes());
        ib.extend_from_slice(&2u32.to_be_bytes());
        ib.extend_from_slice(&2u32.to_be_bytes());
        ib.extend_from_slice(&2u32.to_be_bytes());
        ib.extend_from_slice(&[0, 255, 128, 64, 255, 0, 0, 32]);
        std::fs::write(&img, ib).unwrap();
        let mut lb: Vec<u8> = Vec::new();
        lb.extend_from_slice(&2049u32.to_be_bytes());
        lb.extend_from_slice(&2u32.to_be_bytes());
        lb.extend_from_slice(&[3, 8]);
        std::fs::write(&lbl, lb).unwrap();

        let src = IdxDigitSource::load(&img, &lbl).unwrap();
        assert_eq!(src.image_shape(), (2, 2));
        assert_eq!(src.labels(), &[3, 8]);
        assert_eq!(src.images()[[0, 1]], 1.0);
        assert_eq!(src.images()[[1, 0]], 1.0);
    }
}
