use rand::Rng;

use crate::tensor::Tensor;

/// Xavier (Glorot) uniform initialization on
/// `[−√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out))]`.
pub fn xavier_init<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    assert!(fan_in >= 1 && fan_out >= 1, "fans must be >= 1");
    let bound = xavier_bound(fan_in, fan_out);
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape checked by caller")
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Fans of an `out×in×k×k` convolution kernel; both include the receptive field.
pub fn conv_fans(out_ch: usize, in_ch: usize, kernel: usize) -> (usize, usize) {
    (in_ch * kernel * kernel, out_ch * kernel * kernel)
}
