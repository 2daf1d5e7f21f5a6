//! Small deterministic image datasets for fast tests.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng::{stream, TAG_SYNTH};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticKind {
    /// A Gaussian bump whose position depends on the class.
    Blobs,
    /// A thin ring whose radius depends on the class.
    Rings,
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyntheticKind::Blobs => "blobs",
            SyntheticKind::Rings => "rings",
        })
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(SyntheticKind::Blobs),
            "rings" => Ok(SyntheticKind::Rings),
            _ => Err(Error::invalid(format!("unknown synthetic kind {s:?} (blobs or rings)"))),
        }
    }
}

const PIXEL_NOISE: f64 = 0.05;

/// Intensity as a function of the offset `(dy, dx)` from the shape centre.
type Profile = Box<dyn Fn(f64, f64) -> f64>;

fn render(kind: SyntheticKind, class: usize, classes: usize, size: usize, rng: &mut impl Rng) -> Vec<f64> {
    let s = size as f64;
    let mid = (s - 1.0) / 2.0;
    let (cy, cx, value): (f64, f64, Profile) = match kind {
        SyntheticKind::Blobs => {
            let theta = TAU * class as f64 / classes as f64;
            let radius = s / 4.0;
            // Neighbouring centres sit `TAU * radius / classes` apart; keep the
            // jitter well inside that so many classes stay separable.
            let jitter = (s / 16.0).min(TAU * radius / classes as f64 / 5.0);
            let cy = mid + radius * theta.sin() + rng.random_range(-jitter..=jitter);
            let cx = mid + radius * theta.cos() + rng.random_range(-jitter..=jitter);
            let sigma = s / 8.0;
            (cy, cx, Box::new(move |dy: f64, dx: f64| (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp()))
        }
        SyntheticKind::Rings => {
            let r = s * (0.12 + 0.26 * class as f64 / (classes - 1) as f64);
            let cy = mid + rng.random_range(-1.0..=1.0);
            let cx = mid + rng.random_range(-1.0..=1.0);
            (cy, cx, Box::new(move |dy: f64, dx: f64| {
                let d = (dy * dy + dx * dx).sqrt() - r;
                (-d * d / 0.72).exp()
            }))
        }
    };
    let noise = Normal::new(0.0, PIXEL_NOISE).expect("positive std");
    let mut img = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let v = value(y as f64 - cy, x as f64 - cx) + noise.sample(rng);
            img.push(v.clamp(0.0, 1.0));
        }
    }
    img
}

/// Generates `n_per_class` single-channel `size×size` images per class and
/// splits each class 80/20 into train and test. Samples are interleaved by
/// class, so any prefix of either split is close to balanced.
pub fn synthetic_dataset(
    kind: SyntheticKind,
    n_per_class: usize,
    classes: usize,
    size: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if classes < 2 {
        return Err(Error::invalid(format!("need at least 2 classes, got {classes}")));
    }
    if size < 4 {
        return Err(Error::invalid(format!("image size must be >= 4, got {size}")));
    }
    let n_train = n_per_class * 4 / 5;
    if n_train == 0 || n_train == n_per_class {
        return Err(Error::invalid(format!(
            "{n_per_class} samples per class cannot be split 80/20"
        )));
    }
    let mut parts = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
    for j in 0..n_per_class {
        let part = &mut parts[usize::from(j >= n_train)];
        for class in 0..classes {
            let mut rng = stream(&[seed, TAG_SYNTH, class as u64, j as u64]);
            part.0.extend(render(kind, class, classes, size, &mut rng));
            part.1.push(class);
        }
    }
    let [(train_px, train_y), (test_px, test_y)] = parts;
    let make = |px: Vec<f64>, y: Vec<usize>, split| {
        Dataset::new(Tensor::new(vec![y.len(), 1, size, size], px)?, y, classes, split)
    };
    Ok((make(train_px, train_y, Split::Train)?, make(test_px, test_y, Split::Test)?))
}
