//! Loop-based reference implementations and fixtures shared by the
//! integration tests. Nothing here calls into the engine's kernels.

#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

pub mod suites;

use interflow::autograd::{Tape, Var};
use interflow::data::{Dataset, Split};
use interflow::rng::stream;
use interflow::tensor::Tensor;
use interflow::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    stream(&[0xC0FFEE, seed])
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Uniform values in `±[margin, hi)`, keeping clear of ReLU's kink at zero.
pub fn away_from_zero(shape: &[usize], margin: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            let m = rng.random_range(margin..hi);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `Σ out ⊙ r` for a fixed random `r`, turning any tensor output into a
/// scalar whose gradient exercises every output coordinate differently.
pub fn probe(tape: &mut Tape, out: Var, r: &Tensor) -> Result<Var> {
    let rv = tape.constant(r.clone());
    let p = tape.mul(out, rv)?;
    tape.sum(p)
}

pub fn matmul_oracle(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for t in 0..k {
                s += a.data()[i * k + t] * b.data()[t * n + j];
            }
            out[i * n + j] = s;
        }
    }
    Tensor::new(vec![m, n], out).unwrap()
}

/// Direct cross-correlation with zero padding.
pub fn conv_oracle(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let [n, c, h, wd] = x.shape().try_into().unwrap();
    let [o, _, k, _] = w.shape().try_into().unwrap();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut s = b.data()[oi];
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((ni * c + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((oi * c + ci) * k + ky) * k + kx];
                                s += xv * wv;
                            }
                        }
                    }
                    out[((ni * o + oi) * oh + y) * ow + xx] = s;
                }
            }
        }
    }
    Tensor::new(vec![n, o, oh, ow], out).unwrap()
}

pub fn gap_oracle(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape().try_into().unwrap();
    let mut out = vec![0.0; n * c];
    for i in 0..n * c {
        let mut s = 0.0;
        for j in 0..h * w {
            s += x.data()[i * h * w + j];
        }
        out[i] = s / (h * w) as f64;
    }
    Tensor::new(vec![n, c], out).unwrap()
}

pub fn linear_oracle(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (n, i_f, o_f) = (x.shape()[0], x.shape()[1], w.shape()[0]);
    let mut out = vec![0.0; n * o_f];
    for r in 0..n {
        for o in 0..o_f {
            let mut s = b.data()[o];
            for i in 0..i_f {
                s += x.data()[r * i_f + i] * w.data()[o * i_f + i];
            }
            out[r * o_f + o] = s;
        }
    }
    Tensor::new(vec![n, o_f], out).unwrap()
}

/// Multinomial logistic regression on flattened pixels, trained by full-batch
/// gradient descent; returns test accuracy.
pub fn logistic_regression_accuracy(train: &Dataset, test: &Dataset, steps: usize, lr: f64) -> f64 {
    let d = train.image_len();
    let c = train.num_classes;
    let mut w = vec![0.0; c * d];
    let mut b = vec![0.0; c];
    let scores = |w: &[f64], b: &[f64], x: &[f64]| -> Vec<f64> {
        (0..c).map(|k| b[k] + (0..d).map(|j| w[k * d + j] * x[j]).sum::<f64>()).collect()
    };
    for _ in 0..steps {
        let mut gw = vec![0.0; c * d];
        let mut gb = vec![0.0; c];
        for i in 0..train.len() {
            let x = train.image(i);
            let s = scores(&w, &b, x);
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for k in 0..c {
                let g = e[k] / z - if k == train.labels[i] { 1.0 } else { 0.0 };
                gb[k] += g;
                for j in 0..d {
                    gw[k * d + j] += g * x[j];
                }
            }
        }
        let scale = lr / train.len() as f64;
        w.iter_mut().zip(&gw).for_each(|(p, g)| *p -= scale * g);
        b.iter_mut().zip(&gb).for_each(|(p, g)| *p -= scale * g);
    }
    let correct = (0..test.len())
        .filter(|&i| {
            let s = scores(&w, &b, test.image(i));
            let best = (0..c).fold(0, |bi, k| if s[k] > s[bi] { k } else { bi });
            best == test.labels[i]
        })
        .count();
    correct as f64 / test.len() as f64
}

/// Two-dot images: the dots sit `SEP` pixels apart, side by side for class
/// 0 and one above the other for class 1, at a random location. The local
/// content is the same for both classes, so a single 3×3 layer followed by
/// global pooling cannot tell them apart; wider receptive fields can.
pub const PAIR_SIZE: usize = 12;
pub const PAIR_SEP: usize = 5;

pub fn orientation_pairs(n: usize, seed: u64, split: Split) -> Dataset {
    let noise = Normal::new(0.0, 0.05).unwrap();
    let s = PAIR_SIZE;
    let mut px = Vec::with_capacity(n * s * s);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let mut r = stream(&[seed, 0xD075, i as u64]);
        let y0 = r.random_range(1..s - 1 - PAIR_SEP) as f64 + r.random_range(0.0..1.0);
        let x0 = r.random_range(1..s - 1 - PAIR_SEP) as f64 + r.random_range(0.0..1.0);
        let (y1, x1) = if class == 0 { (y0, x0 + PAIR_SEP as f64) } else { (y0 + PAIR_SEP as f64, x0) };
        for y in 0..s {
            for x in 0..s {
                let dot = |cy: f64, cx: f64| {
                    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                    (-(dy * dy + dx * dx) / 0.98).exp()
                };
                px.push((dot(y0, x0) + dot(y1, x1) + noise.sample(&mut r)).clamp(0.0, 1.0));
            }
        }
        labels.push(class);
    }
    Dataset::new(Tensor::new(vec![n, 1, s, s], px).unwrap(), labels, 2, split).unwrap()
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}
