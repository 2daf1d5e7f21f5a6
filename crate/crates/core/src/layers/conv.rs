//! 2-D convolution (cross-correlation, zero padding) lowered to one GEMM per
//! batch through an im2col buffer.

use crate::autograd::{BackwardRule, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Binder, ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_ch: usize,
    pub height: usize,
    pub width: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn patch(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }
}

/// Output spatial extent, or `None` when the kernel does not fit.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || input + 2 * padding < kernel {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

#[derive(Clone, Debug)]
pub struct Conv2dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dLayer {
    /// Registers zero-initialized weight and bias under `name.weight` / `name.bias`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        assert!(kernel >= 1 && stride >= 1, "kernel and stride must be >= 1");
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::zeros(&[out_ch, in_ch, kernel, kernel]),
            true,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]), true);
        Conv2dLayer {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        }
    }

    pub fn forward(&self, tape: &mut Tape, binder: &mut Binder, store: &ParamStore, x: Var) -> Result<Var> {
        let w = binder.param(tape, store, self.weight);
        let b = binder.param(tape, store, self.bias);
        conv2d(tape, x, w, b, self.stride, self.padding)
    }
}

/// `x: N×C×H×W`, `weight: O×C×k×k`, `bias: O` → `N×O×H'×W'`.
pub fn conv2d(tape: &mut Tape, x: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
    tape.check(x)?;
    tape.check(weight)?;
    tape.check(bias)?;
    let (xv, wv, bv) = (tape.value(x), tape.value(weight), tape.value(bias));
    if xv.rank() != 4 {
        return Err(Error::InvalidShape {
            shape: xv.shape().to_vec(),
            reason: "conv2d input must be N×C×H×W".into(),
        });
    }
    let ws = wv.shape();
    if ws.len() != 4 || ws[2] != ws[3] {
        return Err(Error::InvalidShape {
            shape: ws.to_vec(),
            reason: "conv2d weight must be O×C×k×k".into(),
        });
    }
    let xs = xv.shape();
    if xs[1] != ws[1] {
        return Err(Error::ShapeMismatch {
            op: "conv2d channels",
            lhs: xs.to_vec(),
            rhs: ws.to_vec(),
        });
    }
    if bv.shape() != [ws[0]] {
        return Err(Error::ShapeMismatch {
            op: "conv2d bias",
            lhs: ws.to_vec(),
            rhs: bv.shape().to_vec(),
        });
    }
    if stride == 0
        || conv_output_size(xs[2], ws[2], stride, padding).is_none()
        || conv_output_size(xs[3], ws[2], stride, padding).is_none()
    {
        return Err(Error::InvalidShape {
            shape: xs.to_vec(),
            reason: format!("kernel {} stride {stride} padding {padding} leaves no output", ws[2]),
        });
    }
    let geo = ConvGeometry {
        batch: xs[0],
        in_ch: xs[1],
        height: xs[2],
        width: xs[3],
        out_ch: ws[0],
        kernel: ws[2],
        stride,
        padding,
    };
    let out = conv_forward_raw(&geo, xv.data(), wv.data(), bv.data());
    let out = Tensor::new(vec![geo.batch, geo.out_ch, geo.out_height(), geo.out_width()], out)?;
    tape.record(&[x, weight, bias], out, Conv2dBackward { geo })
}

fn im2col(geo: &ConvGeometry, x: &[f64]) -> Vec<f64> {
    let (oh, ow) = (geo.out_height(), geo.out_width());
    let p = oh * ow;
    let np = geo.batch * p;
    let (h, w, k) = (geo.height, geo.width, geo.kernel);
    let mut cols = vec![0.0; geo.patch() * np];
    for c in 0..geo.in_ch {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst_row = &mut cols[row * np..(row + 1) * np];
                for n in 0..geo.batch {
                    let plane = &x[(n * geo.in_ch + c) * h * w..(n * geo.in_ch + c + 1) * h * w];
                    let dst = &mut dst_row[n * p..(n + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * geo.stride + ki) as isize - geo.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * geo.stride + kj) as isize - geo.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * ow + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(geo: &ConvGeometry, cols: &[f64]) -> Vec<f64> {
    let (oh, ow) = (geo.out_height(), geo.out_width());
    let p = oh * ow;
    let np = geo.batch * p;
    let (h, w, k) = (geo.height, geo.width, geo.kernel);
    let mut x = vec![0.0; geo.batch * geo.in_ch * h * w];
    for c in 0..geo.in_ch {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src_row = &cols[row * np..(row + 1) * np];
                for n in 0..geo.batch {
                    let base = (n * geo.in_ch + c) * h * w;
                    let src = &src_row[n * p..(n + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * geo.stride + ki) as isize - geo.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut x[base + iy as usize * w..base + (iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * geo.stride + kj) as isize - geo.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

pub(crate) fn conv_forward_raw(geo: &ConvGeometry, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let p = geo.positions();
    let np = geo.batch * p;
    let cols = im2col(geo, x);
    let mut mat = vec![0.0; geo.out_ch * np];
    gemm(geo.out_ch, geo.patch(), np, weight, false, &cols, false, 0.0, &mut mat);
    // O×(N·P) → N×O×P, adding the bias.
    let mut out = vec![0.0; geo.batch * geo.out_ch * p];
    for o in 0..geo.out_ch {
        let b = bias[o];
        for n in 0..geo.batch {
            let src = &mat[o * np + n * p..o * np + (n + 1) * p];
            let dst = &mut out[(n * geo.out_ch + o) * p..(n * geo.out_ch + o + 1) * p];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s + b;
            }
        }
    }
    out
}

struct Conv2dBackward {
    geo: ConvGeometry,
}

impl BackwardRule for Conv2dBackward {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let geo = &self.geo;
        let p = geo.positions();
        let np = geo.batch * p;
        // N×O×P → O×(N·P)
        let mut gmat = vec![0.0; geo.out_ch * np];
        for n in 0..geo.batch {
            for o in 0..geo.out_ch {
                let src = &g[(n * geo.out_ch + o) * p..(n * geo.out_ch + o + 1) * p];
                gmat[o * np + n * p..o * np + (n + 1) * p].copy_from_slice(src);
            }
        }
        let gx = needs[0].then(|| {
            let mut dcols = vec![0.0; geo.patch() * np];
            gemm(geo.patch(), geo.out_ch, np, inputs[1].data(), true, &gmat, false, 0.0, &mut dcols);
            col2im(geo, &dcols)
        });
        let gw = needs[1].then(|| {
            let cols = im2col(geo, inputs[0].data());
            let mut dw = vec![0.0; geo.out_ch * geo.patch()];
            gemm(geo.out_ch, np, geo.patch(), &gmat, false, &cols, true, 0.0, &mut dw);
            dw
        });
        let gb = needs[2].then(|| gmat.chunks(np).map(|row| row.iter().sum()).collect());
        vec![gx, gw, gb]
    }
}
