use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DatasetSplit;
use crate::tensor::Tensor;

/// Per-pixel mean over a split, shape `(3, 32, 32)`.
pub fn per_pixel_mean(split: &DatasetSplit) -> Tensor<f32> {
    let (n, c, h, w) = split.images.dims4().expect("split images are rank 4");
    let per = c * h * w;
    let mut acc = vec![0.0f64; per];
    for sample in split.images.data().chunks(per) {
        for (a, &v) in acc.iter_mut().zip(sample) {
            *a += v as f64;
        }
    }
    Tensor::from_vec(&[c, h, w], acc.into_iter().map(|a| (a / n.max(1) as f64) as f32).collect())
        .expect("mean shape")
}

#[derive(Debug, Clone)]
pub enum Preprocess {
    None,
    SubtractMean(Tensor<f32>),
}

/// Sample order for `epoch`: a permutation drawn from ChaCha8 seeded with
/// `seed` and the epoch index, so any epoch can be replayed on its own.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// One epoch of shuffled minibatches; the last short batch is emitted as-is.
pub struct BatchIter<'a> {
    split: &'a DatasetSplit,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    preprocess: Preprocess,
}

impl<'a> BatchIter<'a> {
    pub fn new(split: &'a DatasetSplit, batch_size: usize, seed: u64, epoch: usize, preprocess: Preprocess) -> Self {
        assert!(batch_size > 0, "batch size must be positive");
        BatchIter {
            split,
            order: epoch_order(split.len(), seed, epoch),
            batch_size,
            pos: 0,
            preprocess,
        }
    }

    /// Batches in storage order, without shuffling.
    pub fn sequential(split: &'a DatasetSplit, batch_size: usize) -> Self {
        assert!(batch_size > 0, "batch size must be positive");
        BatchIter {
            split,
            order: (0..split.len()).collect(),
            batch_size,
            pos: 0,
            preprocess: Preprocess::None,
        }
    }
}

impl Iterator for BatchIter<'_> {
    type Item = (Tensor<f32>, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let mut images = self.split.images.select_outer(idx);
        if let Preprocess::SubtractMean(mean) = &self.preprocess {
            for sample in images.data_mut().chunks_mut(mean.len()) {
                for (v, &m) in sample.iter_mut().zip(mean.data()) {
                    *v -= m;
                }
            }
        }
        Some((images, idx.iter().map(|&i| self.split.labels[i]).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ScaleTag;

    fn split(n: usize) -> DatasetSplit {
        DatasetSplit::new(
            Tensor::from_fn(&[n, 3, 32, 32], |i| ((i * 7919) % 1000) as f32 / 1000.0),
            (0..n).map(|i| i % 10).collect(),
            vec![ScaleTag::Original; n],
        )
        .unwrap()
    }

    #[test]
    fn batch_sizes_and_short_tail() {
        let s = split(250);
        let sizes: Vec<usize> = BatchIter::new(&s, 100, 1, 0, Preprocess::None).map(|b| b.1.len()).collect();
        assert_eq!(sizes, vec![100, 100, 50]);
    }

    #[test]
    fn same_seed_same_order() {
        let s = split(50);
        let a: Vec<Vec<usize>> = BatchIter::new(&s, 8, 3, 2, Preprocess::None).map(|b| b.1).collect();
        let b: Vec<Vec<usize>> = BatchIter::new(&s, 8, 3, 2, Preprocess::None).map(|b| b.1).collect();
        assert_eq!(a, b);
        assert_ne!(epoch_order(50, 3, 2), epoch_order(50, 3, 3));
        let mut o = epoch_order(50, 3, 2);
        o.sort();
        assert_eq!(o, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn mean_subtracted_set_has_zero_mean() {
        let s = split(40);
        let mean = per_pixel_mean(&s);
        let mut acc = vec![0.0f64; 3072];
        for (images, _) in BatchIter::new(&s, 16, 0, 0, Preprocess::SubtractMean(mean)) {
            for sample in images.data().chunks(3072) {
                for (a, &v) in acc.iter_mut().zip(sample) {
                    *a += v as f64;
                }
            }
        }
        assert!(acc.iter().all(|a| (a / 40.0).abs() < 1e-6));
    }
}
