//! Image folders to labeled, environment-split sample lists.

mod imageio;
mod labels;
mod manifest;
mod split;
pub mod synthetic;

pub use imageio::{decode_ppm, encode_ppm, load_image, read_image, resize_bilinear, write_ppm, RgbImage};
pub use labels::{LabelMap, EXCLUDED};
pub use manifest::{scan_dataset, DatasetManifest, ExcludeList, SampleRecord, ScanReport, MANIFEST_HEADER};
pub use split::{carve_validation, environment_split, Split, SplitSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decoded images `[H, W, 3]` with their mapped class labels.
#[derive(Debug, Clone, Default)]
pub struct LoadedSet {
    pub images: Vec<Tensor<f32>>,
    pub labels: Vec<usize>,
}

impl LoadedSet {
    /// Loads every record at `size`. Excluded records are an error: they
    /// must be dropped by the split before reaching a batch.
    pub fn from_records(records: &[SampleRecord], size: (usize, usize)) -> Result<Self> {
        let mut set = LoadedSet::default();
        for r in records {
            let label = r.mapped_class.ok_or_else(|| {
                Error::Dataset(format!("{} belongs to an excluded class", r.path.display()))
            })?;
            set.images.push(load_image(&r.path, size)?);
            set.labels.push(label);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Stacks the images at `indices` into an `[N, H, W, 3]` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let items: Vec<Tensor<f32>> = indices.iter().map(|&i| self.images[i].clone()).collect();
        Ok((Tensor::stack(&items)?, indices.iter().map(|&i| self.labels[i]).collect()))
    }
}
