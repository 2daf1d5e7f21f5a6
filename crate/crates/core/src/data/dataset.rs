use std::fmt;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{stream, TAG_SUBSAMPLE};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Labeled images stored as one `N×C×H×W` tensor.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::InvalidShape {
                shape: images.shape().to_vec(),
                reason: "dataset images must be N×C×H×W".into(),
            });
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::invalid(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some((sample, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                sample,
                label,
                classes: num_classes,
            });
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(C, H, W)` of one image.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn image_len(&self) -> usize {
        let (c, h, w) = self.image_shape();
        c * h * w
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let len = self.image_len();
        &self.images.data()[i * len..(i + 1) * len]
    }

    /// Stacks the listed samples into a batch tensor.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let (c, h, w) = self.image_shape();
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let images = Tensor::new(vec![indices.len(), c, h, w], data).expect("non-empty batch");
        (images, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::invalid("subset must keep at least one sample"));
        }
        let (images, labels) = self.batch(indices);
        Dataset::new(images, labels, self.num_classes, self.split)
    }

    /// The first `⌈scale·N⌉` samples after a shuffle seeded by `seed`.
    pub fn subsample(&self, scale: f64, seed: u64) -> Result<Dataset> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::invalid(format!("scale must be in (0, 1], got {scale}")));
        }
        let keep = ((scale * self.len() as f64).ceil() as usize).clamp(1, self.len());
        self.shuffled_prefix(keep, seed)
    }

    /// The first `n` samples (all if fewer) after a shuffle seeded by `seed`.
    pub fn shuffled_prefix(&self, n: usize, seed: u64) -> Result<Dataset> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut stream(&[seed, TAG_SUBSAMPLE, self.split as u64]));
        idx.truncate(n.min(self.len()));
        self.subset(&idx)
    }
}
