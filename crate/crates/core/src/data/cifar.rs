//! CIFAR binary batches: fixed-size records of label byte(s) followed by
//! 3072 pixel bytes (red plane, green plane, blue plane, each 32×32 row-major).

use std::fs;
use std::path::Path;

use crate::data::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarVariant {
    /// One label byte, ten classes.
    Cifar10,
    /// Coarse and fine label bytes; the fine label (100 classes) is used.
    Cifar100,
}

impl CifarVariant {
    pub fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + CIFAR_PIXELS
    }

    pub fn classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }
}

/// Parses one file's records, appending pixels (scaled to `[0, 1]`) and labels.
pub fn parse_cifar_records(
    bytes: &[u8],
    path: &Path,
    variant: CifarVariant,
    pixels: &mut Vec<f64>,
    labels: &mut Vec<usize>,
) -> Result<()> {
    let rec = variant.record_len();
    if bytes.is_empty() || !bytes.len().is_multiple_of(rec) {
        return Err(Error::format(
            path,
            bytes.len() - bytes.len() % rec,
            format!("size {} is not a positive multiple of the {rec}-byte record", bytes.len()),
        ));
    }
    for (i, r) in bytes.chunks_exact(rec).enumerate() {
        let label = usize::from(r[variant.label_bytes() - 1]);
        if label >= variant.classes() {
            return Err(Error::format(
                path,
                i * rec,
                format!("record {i}: label {label} out of range for {} classes", variant.classes()),
            ));
        }
        labels.push(label);
        pixels.extend(r[variant.label_bytes()..].iter().map(|&p| f64::from(p) / 255.0));
    }
    Ok(())
}

/// Concatenates the records of every file in order.
pub fn load_cifar_binary<P: AsRef<Path>>(paths: &[P], variant: CifarVariant, split: Split) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let bytes = fs::read(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
        parse_cifar_records(&bytes, p, variant, &mut pixels, &mut labels)?;
    }
    if labels.is_empty() {
        return Err(Error::invalid("no CIFAR files given"));
    }
    let images = Tensor::new(vec![labels.len(), 3, CIFAR_SIDE, CIFAR_SIDE], pixels)?;
    Dataset::new(images, labels, variant.classes(), split)
}

pub fn load_cifar10_binary<P: AsRef<Path>>(paths: &[P], split: Split) -> Result<Dataset> {
    load_cifar_binary(paths, CifarVariant::Cifar10, split)
}

/// Writes a `3×32×32` dataset with pixels in `[0, 1]`. CIFAR-100 records get
/// a zero coarse label.
pub fn write_cifar_binary(ds: &Dataset, path: &Path, variant: CifarVariant) -> Result<()> {
    if ds.image_shape() != (3, CIFAR_SIDE, CIFAR_SIDE) {
        return Err(Error::invalid(format!("CIFAR records are 3×32×32, got {:?}", ds.image_shape())));
    }
    let mut out = Vec::with_capacity(ds.len() * variant.record_len());
    for i in 0..ds.len() {
        if variant == CifarVariant::Cifar100 {
            out.push(0);
        }
        out.push(ds.labels[i] as u8);
        out.extend(ds.image(i).iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// `data_batch_1.bin`..`data_batch_5.bin` or `test_batch.bin` for CIFAR-10,
/// `train.bin` / `test.bin` for CIFAR-100.
pub fn load_cifar_dir(dir: &Path, variant: CifarVariant, split: Split) -> Result<Dataset> {
    let files: Vec<_> = match (variant, split) {
        (CifarVariant::Cifar10, Split::Train) => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
        (CifarVariant::Cifar10, Split::Test) => vec![dir.join("test_batch.bin")],
        (CifarVariant::Cifar100, Split::Train) => vec![dir.join("train.bin")],
        (CifarVariant::Cifar100, Split::Test) => vec![dir.join("test.bin")],
    };
    load_cifar_binary(&files, variant, split)
}
