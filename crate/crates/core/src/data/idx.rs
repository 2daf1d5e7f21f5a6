//! The big-endian IDX container used by the MNIST family.

use std::fs;
use std::path::Path;

use crate::data::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const IDX_CLASSES: usize = 10;

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::format(path, offset, "truncated header"))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

/// Parses an image file into `(N, H, W, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(path, 0, format!("bad image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let h = be_u32(bytes, 8, path)? as usize;
    let w = be_u32(bytes, 12, path)? as usize;
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::format(path, 4, format!("empty image dimensions {n}×{h}×{w}")));
    }
    let want = n * h * w;
    let payload = &bytes[16..];
    if payload.len() < want {
        return Err(Error::format(
            path,
            bytes.len(),
            format!("truncated payload: {} of {want} pixel bytes", payload.len()),
        ));
    }
    if payload.len() > want {
        return Err(Error::format(path, 16 + want, "trailing bytes after the pixel payload"));
    }
    Ok((n, h, w, payload.to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(path, 0, format!("bad label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let payload = &bytes[8..];
    if payload.len() < n {
        return Err(Error::format(
            path,
            bytes.len(),
            format!("truncated payload: {} of {n} label bytes", payload.len()),
        ));
    }
    if payload.len() > n {
        return Err(Error::format(path, 8 + n, "trailing bytes after the label payload"));
    }
    if let Some(i) = payload.iter().position(|&l| l as usize >= IDX_CLASSES) {
        return Err(Error::format(path, 8 + i, format!("label {} out of range", payload[i])));
    }
    Ok(payload.to_vec())
}

/// Loads an image/label file pair; pixels are scaled to `[0, 1]`.
pub fn load_idx(image_path: &Path, label_path: &Path, split: Split) -> Result<Dataset> {
    let (n, h, w, pixels) = parse_idx_images(&read(image_path)?, image_path)?;
    let labels = parse_idx_labels(&read(label_path)?, label_path)?;
    if labels.len() != n {
        return Err(Error::format(
            label_path,
            4,
            format!("{} labels for {n} images in {}", labels.len(), image_path.display()),
        ));
    }
    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let images = Tensor::new(vec![n, 1, h, w], data)?;
    Dataset::new(images, labels.into_iter().map(usize::from).collect(), IDX_CLASSES, split)
}

/// Quantizes a `[0, 1]` single-channel dataset back to bytes.
pub fn write_idx(ds: &Dataset, image_path: &Path, label_path: &Path) -> Result<()> {
    let (c, h, w) = ds.image_shape();
    if c != 1 {
        return Err(Error::invalid(format!("IDX holds single-channel images, got {c} channels")));
    }
    if ds.num_classes > IDX_CLASSES {
        return Err(Error::invalid(format!("IDX labels are digits, got {} classes", ds.num_classes)));
    }
    let mut img = Vec::with_capacity(16 + ds.images.len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [ds.len(), h, w] {
        img.extend_from_slice(&(d as u32).to_be_bytes());
    }
    img.extend(ds.images.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + ds.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    lab.extend(ds.labels.iter().map(|&l| l as u8));
    fs::write(image_path, img).map_err(|e| Error::io(format!("writing {}", image_path.display()), e))?;
    fs::write(label_path, lab).map_err(|e| Error::io(format!("writing {}", label_path.display()), e))
}

/// Standard file names inside an MNIST-style directory.
pub fn load_mnist_dir(dir: &Path, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    load_idx(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
        split,
    )
}
