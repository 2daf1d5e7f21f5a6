use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Zero padding added on each side before cropping.
pub const PAD: usize = 4;

/// Crops `C×H×W` out of the image zero-padded by [`PAD`], taking the window
/// whose top-left corner is at `(dy, dx)` in padded coordinates, then
/// mirrors it left-right when `flip` is set. `(PAD, PAD)` without a flip is
/// the identity.
pub fn pad_crop_flip(image: &[f64], c: usize, h: usize, w: usize, dy: usize, dx: usize, flip: bool) -> Vec<f64> {
    debug_assert!(dy <= 2 * PAD && dx <= 2 * PAD);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            // source row in unpadded coordinates
            let sy = (y + dy).wrapping_sub(PAD);
            if sy >= h {
                continue;
            }
            for x in 0..w {
                let sx = (x + dx).wrapping_sub(PAD);
                if sx >= w {
                    continue;
                }
                let ox = if flip { w - 1 - x } else { x };
                out[(ch * h + y) * w + ox] = image[(ch * h + sy) * w + sx];
            }
        }
    }
    out
}

/// Draws the crop offsets and flip from `rng` and applies them.
pub fn augment_slice<R: Rng + ?Sized>(image: &[f64], c: usize, h: usize, w: usize, rng: &mut R) -> Vec<f64> {
    let dy = rng.random_range(0..=2 * PAD);
    let dx = rng.random_range(0..=2 * PAD);
    let flip = rng.random_bool(0.5);
    pad_crop_flip(image, c, h, w, dy, dx, flip)
}

/// Pad-4, random crop and 50% horizontal flip of one `C×H×W` image.
pub fn augment_pad_crop_flip<R: Rng + ?Sized>(image: &Tensor, rng: &mut R) -> Result<Tensor> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::InvalidShape {
            shape: image.shape().to_vec(),
            reason: "augmentation expects a C×H×W image".into(),
        });
    };
    Tensor::new(vec![c, h, w], augment_slice(image.data(), c, h, w, rng))
}
