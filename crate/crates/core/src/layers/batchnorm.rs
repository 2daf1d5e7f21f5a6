use crate::autograd::{BackwardRule, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Binder, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch normalization over `N×C×H×W` inputs.
///
/// Running statistics are buffers, not parameters: they are updated in train
/// mode and never receive gradients.
#[derive(Clone, Debug)]
pub struct BatchNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNormLayer {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::ones(&[channels]), true);
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), true);
        BatchNormLayer {
            gamma,
            beta,
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward(&mut self, tape: &mut Tape, binder: &mut Binder, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let gamma = binder.param(tape, store, self.gamma);
        let beta = binder.param(tape, store, self.beta);
        match mode {
            Mode::Train => {
                let (out, stats) = batchnorm_train(tape, x, gamma, beta, self.eps)?;
                let m = self.momentum;
                for c in 0..self.channels() {
                    self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * stats.mean[c];
                    self.running_var[c] = (1.0 - m) * self.running_var[c] + m * stats.unbiased_var[c];
                }
                Ok(out)
            }
            Mode::Eval => batchnorm_eval(tape, x, gamma, beta, &self.running_mean, &self.running_var, self.eps),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Population (1/M) variance, used for normalization.
    pub var: Vec<f64>,
    /// Unbiased (1/(M−1)) variance, used for the running estimate.
    pub unbiased_var: Vec<f64>,
}

fn check_bn_shapes(tape: &Tape, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
    tape.check(x)?;
    tape.check(gamma)?;
    tape.check(beta)?;
    let xs = tape.value(x).shape();
    if xs.len() != 4 {
        return Err(Error::InvalidShape {
            shape: xs.to_vec(),
            reason: "batchnorm input must be N×C×H×W".into(),
        });
    }
    let c = xs[1];
    for v in [gamma, beta] {
        if tape.value(v).shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "batchnorm affine",
                lhs: xs.to_vec(),
                rhs: tape.value(v).shape().to_vec(),
            });
        }
    }
    Ok((xs[0], c, xs[2] * xs[3]))
}

/// Normalizes with the batch's own per-channel statistics.
pub fn batchnorm_train(tape: &mut Tape, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
    let (n, c, hw) = check_bn_shapes(tape, x, gamma, beta)?;
    let count = n * hw;
    if count < 2 {
        return Err(Error::invalid(format!(
            "batchnorm train mode needs at least 2 values per channel, got {count}"
        )));
    }
    let xd = tape.value(x).data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for i in 0..n {
            s += xd[(i * c + ch) * hw..(i * c + ch + 1) * hw].iter().sum::<f64>();
        }
        let mu = s / count as f64;
        let mut sq = 0.0;
        for i in 0..n {
            sq += xd[(i * c + ch) * hw..(i * c + ch + 1) * hw]
                .iter()
                .map(|v| (v - mu) * (v - mu))
                .sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = sq / count as f64;
    }
    let unbiased_var = var.iter().map(|v| v * count as f64 / (count - 1) as f64).collect();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let (out, xhat) = normalize(
        tape.value(x),
        tape.value(gamma).data(),
        tape.value(beta).data(),
        &mean,
        &inv_std,
    )?;
    let var_out = tape.record(
        &[x, gamma, beta],
        out,
        BatchNormBackward {
            xhat,
            inv_std,
            batch_stats: true,
            n,
            c,
            hw,
        },
    )?;
    Ok((
        var_out,
        BatchStats {
            mean,
            var,
            unbiased_var,
        },
    ))
}

/// Normalizes with fixed statistics (evaluation mode).
pub fn batchnorm_eval(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Result<Var> {
    let (n, c, hw) = check_bn_shapes(tape, x, gamma, beta)?;
    if mean.len() != c || var.len() != c {
        return Err(Error::invalid("running statistics do not match channel count"));
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let (out, xhat) = normalize(
        tape.value(x),
        tape.value(gamma).data(),
        tape.value(beta).data(),
        mean,
        &inv_std,
    )?;
    tape.record(
        &[x, gamma, beta],
        out,
        BatchNormBackward {
            xhat,
            inv_std,
            batch_stats: false,
            n,
            c,
            hw,
        },
    )
}

fn normalize(x: &Tensor, gamma: &[f64], beta: &[f64], mean: &[f64], inv_std: &[f64]) -> Result<(Tensor, Vec<f64>)> {
    let s = x.shape();
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    let xd = x.data();
    let mut xhat = vec![0.0; xd.len()];
    let mut out = vec![0.0; xd.len()];
    for i in 0..n {
        for ch in 0..c {
            let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
            for j in r {
                let h = (xd[j] - mean[ch]) * inv_std[ch];
                xhat[j] = h;
                out[j] = gamma[ch] * h + beta[ch];
            }
        }
    }
    Ok((Tensor::new(s.to_vec(), out)?, xhat))
}

struct BatchNormBackward {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    /// Statistics came from the batch itself, so they depend on `x`.
    batch_stats: bool,
    n: usize,
    c: usize,
    hw: usize,
}

impl BackwardRule for BatchNormBackward {
    fn name(&self) -> &'static str {
        "batchnorm"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (n, c, hw) = (self.n, self.c, self.hw);
        let gamma = inputs[1].data();
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for i in 0..n {
            for ch in 0..c {
                let span = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                for (&gj, &xj) in g[span.clone()].iter().zip(&self.xhat[span]) {
                    dgamma[ch] += gj * xj;
                    dbeta[ch] += gj;
                }
            }
        }
        let dx = needs[0].then(|| {
            let mut dx = vec![0.0; g.len()];
            let m = (n * hw) as f64;
            for ch in 0..c {
                let k = gamma[ch] * self.inv_std[ch];
                // With batch statistics: dx = γ·σ⁻¹/M · (M·g − Σg − x̂·Σ(g·x̂)).
                let (sum_g, sum_gx) = if self.batch_stats {
                    (dbeta[ch], dgamma[ch])
                } else {
                    (0.0, 0.0)
                };
                for i in 0..n {
                    for j in (i * c + ch) * hw..(i * c + ch + 1) * hw {
                        dx[j] = if self.batch_stats {
                            k * (g[j] - sum_g / m - self.xhat[j] * sum_gx / m)
                        } else {
                            k * g[j]
                        };
                    }
                }
            }
            dx
        });
        vec![dx, needs[1].then_some(dgamma), needs[2].then_some(dbeta)]
    }
}
