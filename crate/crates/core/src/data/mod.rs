//! Dataset construction and ingestion: the three synthetic 2D distributions,
//! the stacked-digit builder, the KDD99 tabular pipeline, and the archive
//! container they all persist through.

mod archive;
mod kdd99;
mod stacked;
mod synthetic2d;

pub use archive::{load_archive, save_archive, ArchiveDtype, ArchiveManifest, ArrayArchive};
pub use kdd99::{load_kdd99, AnomalyLabelConvention, Kdd99Options, TabularDataset, TabularSchema};
pub use stacked::{
    build_stacked_mnist, DigitSource, IdxDigitSource, StackedDataset, StackedMnistSpec,
    SyntheticDigitSource,
};
pub use synthetic2d::{synthetic2d, Synthetic2DSpec, ToyFamily};
