//! Materializes the training matrix and evaluation context named by a
//! run configuration's `[data]` section.

use std::path::Path;

use meg_core::config::RunConfig;
use meg_core::data::{
    build_stacked_mnist, load_kdd99, synthetic2d, DigitSource, IdxDigitSource, StackedMnistSpec,
    Synthetic2DSpec, SyntheticDigitSource, ToyFamily,
};
use meg_core::error::{MegError, Result};
use meg_core::rng;
use ndarray::Array2;

pub enum RunDataset {
    Toy {
        spec: Synthetic2DSpec,
        train: Array2<f32>,
    },
    Stacked {
        spec: StackedMnistSpec,
        train: Array2<f32>,
        eval_modes: Vec<u32>,
        templates: Array2<f32>,
    },
    Tabular {
        train: Array2<f32>,
        test: Array2<f32>,
        test_labels: Vec<bool>,
    },
    ImageHeldout {
        train: Array2<f32>,
        test: Array2<f32>,
        test_labels: Vec<bool>,
    },
}

impl RunDataset {
    pub fn train_matrix(&self) -> &Array2<f32> {
        match self {
            RunDataset::Toy { train, .. }
            | RunDataset::Stacked { train, .. }
            | RunDataset::Tabular { train, .. }
            | RunDataset::ImageHeldout { train, .. } => train,
        }
    }

    /// Test set with anomaly labels, when this dataset defines one.
    pub fn anomaly_eval(&self) -> Option<(&Array2<f32>, &[bool])> {
        match self {
            RunDataset::Tabular { test, test_labels, .. }
            | RunDataset::ImageHeldout { test, test_labels, .. } => {
                Some((test, test_labels.as_slice()))
            }
            _ => None,
        }
    }
}

fn require_path<'a>(
    path: &'a Option<std::path::PathBuf>,
    what: &str,
) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| {
        MegError::config(format!("dataset requires {what} (set it in the [data] section)"))
    })
}

pub fn materialize(cfg: &RunConfig) -> Result<RunDataset> {
    let data = &cfg.data;
    let seed = cfg.training.seed;
    match data.dataset.as_str() {
        "8gaussians" | "25gaussians" | "swissroll" => {
            let family = ToyFamily::parse(&data.dataset).expect("matched above");
            let mut spec = Synthetic2DSpec::standard(family);
            if let Some(sigma) = data.sigma {
                spec.sigma = sigma;
            }
            let mut rng = rng::stream(seed, rng::streams::DATA_BUILD);
            let train = synthetic2d::<f32, _>(&spec, data.train_samples, &mut rng)?.into_values();
            Ok(RunDataset::Toy { spec, train })
        }
        "stackedmnist" => {
            let spec = StackedMnistSpec {
                stacks: data.stacks,
                train_count: data.stacked_train_count,
                eval_count: data.stacked_eval_count,
            };
            match data.digit_source.as_str() {
                "synthetic" => {
                    let source = SyntheticDigitSource::new(
                        data.digit_shape[0],
                        data.digit_shape[1],
                        data.digit_per_class,
                        seed,
                    )?;
                    let templates = source.class_templates();
                    let ds = build_stacked_mnist(&spec, &source, seed, None)?;
                    Ok(RunDataset::Stacked {
                        spec,
                        train: ds.train_images,
                        eval_modes: ds.eval_modes,
                        templates,
                    })
                }
                "idx" => {
                    let images = require_path(&data.mnist_images, "data.mnist_images")?;
                    let labels = require_path(&data.mnist_labels, "data.mnist_labels")?;
                    let source = IdxDigitSource::load(images, labels)?;
                    let templates = source.class_templates();
                    let ds = build_stacked_mnist(&spec, &source, seed, None)?;
                    Ok(RunDataset::Stacked {
                        spec,
                        train: ds.train_images,
                        eval_modes: ds.eval_modes,
                        templates,
                    })
                }
                other => Err(MegError::config(format!(
                    "unknown digit_source '{other}' (expected 'synthetic' or 'idx')"
                ))),
            }
        }
        "kdd99" => {
            let path = require_path(&data.kdd99_path, "data.kdd99_path")?;
            let ds = load_kdd99(path, &data.kdd99_options())?;
            Ok(RunDataset::Tabular {
                train: ds.train_inliers(),
                test: ds.test,
                test_labels: ds.test_labels,
            })
        }
        "mnist-heldout" => {
            let images = require_path(&data.mnist_images, "data.mnist_images")?;
            let labels = require_path(&data.mnist_labels, "data.mnist_labels")?;
            let train_src = IdxDigitSource::load(images, labels)?;
            let test_images = require_path(&data.mnist_test_images, "data.mnist_test_images")?;
            let test_labels_path = require_path(&data.mnist_test_labels, "data.mnist_test_labels")?;
            let test_src = IdxDigitSource::load(test_images, test_labels_path)?;
            let digit = data.heldout_digit;
            if digit > 9 {
                return Err(MegError::config("heldout_digit must be 0-9"));
            }

            let keep: Vec<usize> = train_src
                .labels()
                .iter()
                .enumerate()
                .filter(|(_, &l)| l != digit)
                .map(|(i, _)| i)
                .collect();
            let mut train = Array2::zeros((keep.len(), train_src.images().ncols()));
            for (row, &src) in keep.iter().enumerate() {
                train.row_mut(row).assign(&train_src.images().row(src));
            }
            let test = test_src.images().clone();
            let test_labels: Vec<bool> = test_src.labels().iter().map(|&l| l == digit).collect();
            Ok(RunDataset::ImageHeldout { train, test, test_labels })
        }
        other => Err(MegError::config(format!(
            "unknown dataset '{other}' (expected 8gaussians, 25gaussians, swissroll, stackedmnist, kdd99 or mnist-heldout)"
        ))),
    }
}
