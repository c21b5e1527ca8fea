//! Labeled image splits, CIFAR-10 binary ingestion, the three-scale test set
//! and minibatch iteration.

pub mod batch;
pub mod cifar;
pub mod scaled;
pub mod synth;

pub use batch::{per_pixel_mean, BatchIter, Preprocess};
pub use cifar::{load_batch_dir, load_cifar10, read_batch_file, write_batch_file, write_tag_file};
pub use scaled::{central_crop, make_object_size_series, make_scaled_test_set};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_SIDE: usize = 32;
pub const CHANNELS: usize = 3;
pub const CLASSES: usize = 10;

const NATURAL_FIXTURE: &[u8] = include_bytes!("../../fixtures/natural_test_batch.bin");

/// 100 natural-image 32x32 crops in CIFAR record format, bundled for the
/// invariance study when the CIFAR-10 test batch is not at hand. Labels are
/// placeholders.
pub fn natural_fixture() -> DatasetSplit {
    cifar::parse_records(std::path::Path::new("natural_test_batch.bin"), NATURAL_FIXTURE)
        .expect("bundled fixture is well formed")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScaleTag {
    Original,
    Small,
    Middle,
    Large,
}

impl ScaleTag {
    pub const ALL: [ScaleTag; 4] = [ScaleTag::Original, ScaleTag::Small, ScaleTag::Middle, ScaleTag::Large];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ScaleTag::Original => "original",
            ScaleTag::Small => "small",
            ScaleTag::Middle => "middle",
            ScaleTag::Large => "large",
        }
    }
}

/// Images `(n, 3, 32, 32)` in `[0, 1]`, with a label and scale tag per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub tags: Vec<ScaleTag>,
}

impl DatasetSplit {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, tags: Vec<ScaleTag>) -> Result<Self> {
        let split = DatasetSplit { images, labels, tags };
        split.validate()?;
        Ok(split)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, ..) = self.images.dims4()?;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.labels.len() != n || self.tags.len() != n {
            return bad(format!(
                "{n} images, {} labels, {} tags",
                self.labels.len(),
                self.tags.len()
            ));
        }
        if let Some(l) = self.labels.iter().find(|&&l| l >= CLASSES) {
            return bad(format!("label {l} out of range"));
        }
        if !self.images.all_finite() {
            return bad("non-finite pixel".into());
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> Tensor<f32> {
        let s = self.images.slice_outer(i, i + 1);
        let shape = s.shape()[1..].to_vec();
        s.reshape(&shape).expect("sample reshape")
    }

    pub fn select(&self, indices: &[usize]) -> DatasetSplit {
        DatasetSplit {
            images: self.images.select_outer(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            tags: indices.iter().map(|&i| self.tags[i]).collect(),
        }
    }

    /// First `per_class` samples of every class, in original order.
    pub fn first_n_per_class(&self, per_class: usize) -> DatasetSplit {
        let mut counts = [0usize; CLASSES];
        let picked: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let c = &mut counts[self.labels[i]];
                *c += 1;
                *c <= per_class
            })
            .collect();
        self.select(&picked)
    }

    pub fn concat(parts: &[&DatasetSplit]) -> Result<DatasetSplit> {
        let images: Vec<&Tensor<f32>> = parts.iter().map(|p| &p.images).collect();
        DatasetSplit::new(
            Tensor::concat_outer(&images)?,
            parts.iter().flat_map(|p| p.labels.iter().copied()).collect(),
            parts.iter().flat_map(|p| p.tags.iter().copied()).collect(),
        )
    }

    /// Indices of samples carrying `tag`.
    pub fn indices_with_tag(&self, tag: ScaleTag) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.tags[i] == tag).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(labels: Vec<usize>) -> DatasetSplit {
        let n = labels.len();
        DatasetSplit::new(
            Tensor::from_fn(&[n, 3, 32, 32], |i| (i / 3072) as f32 / n as f32),
            labels,
            vec![ScaleTag::Original; n],
        )
        .unwrap()
    }

    #[test]
    fn first_n_per_class_is_deterministic_and_balanced() {
        let s = split((0..100).map(|i| (i * 7) % 10).collect());
        let sub = s.first_n_per_class(3);
        assert_eq!(sub.len(), 30);
        for c in 0..10 {
            assert_eq!(sub.labels.iter().filter(|&&l| l == c).count(), 3);
        }
        assert_eq!(sub, s.first_n_per_class(3));
    }

    #[test]
    fn validation() {
        assert!(DatasetSplit::new(Tensor::zeros(&[2, 3, 32, 32]), vec![0], vec![ScaleTag::Small; 2]).is_err());
        assert!(DatasetSplit::new(Tensor::zeros(&[1, 3, 32, 32]), vec![10], vec![ScaleTag::Small]).is_err());
    }
}
