//! Attention fusion of branch confidence vectors.
//!
//! All three variants compute a weighted sum of the `n` branch logit tensors
//! (each `N×C`); they differ only in where the weights come from:
//!
//! * hard: fixed, hand-picked per-branch weights, no gradient;
//! * soft scalar: one learned weight per branch (a `1×n` convolution over the
//!   stacked branch outputs);
//! * soft per-class: one learned weight per branch and class (a point-wise
//!   convolution), `n·C` weights in total.
//!
//! There is no bias and no normalization: learned weights are raw,
//! sign-bearing reals.

use std::fmt;
use std::str::FromStr;

use crate::autograd::{BackwardRule, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Binder, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionMode {
    Hard,
    SoftScalar,
    SoftPerClass,
}

impl AttentionMode {
    pub fn learnable(self) -> bool {
        !matches!(self, AttentionMode::Hard)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionMode::Hard => "hard",
            AttentionMode::SoftScalar => "soft_scalar",
            AttentionMode::SoftPerClass => "soft_perclass",
        }
    }

    pub fn weight_shape(self, branches: usize, classes: usize) -> Vec<usize> {
        match self {
            AttentionMode::Hard | AttentionMode::SoftScalar => vec![branches],
            AttentionMode::SoftPerClass => vec![branches, classes],
        }
    }
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(AttentionMode::Hard),
            "soft_scalar" => Ok(AttentionMode::SoftScalar),
            "soft_perclass" => Ok(AttentionMode::SoftPerClass),
            other => Err(Error::invalid(format!("unknown attention mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AttentionModule {
    pub mode: AttentionMode,
    pub weights: ParamId,
    pub branches: usize,
    pub classes: usize,
}

impl AttentionModule {
    /// Registers the weight tensor as `attention.weight`; hard weights are frozen.
    pub fn new(store: &mut ParamStore, mode: AttentionMode, initial: Tensor, branches: usize, classes: usize) -> Result<Self> {
        let shape = mode.weight_shape(branches, classes);
        if initial.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "attention weights",
                lhs: shape,
                rhs: initial.shape().to_vec(),
            });
        }
        let weights = store.add("attention.weight", initial, mode.learnable());
        Ok(AttentionModule {
            mode,
            weights,
            branches,
            classes,
        })
    }

    pub fn fuse(&self, tape: &mut Tape, binder: &mut Binder, store: &ParamStore, branch_logits: &[Var]) -> Result<Var> {
        let w = binder.param(tape, store, self.weights);
        match self.mode {
            AttentionMode::Hard | AttentionMode::SoftScalar => attention_fuse_soft_scalar(tape, branch_logits, w),
            AttentionMode::SoftPerClass => attention_fuse_soft_perclass(tape, branch_logits, w),
        }
    }
}

/// `Σᵢ wᵢ·zᵢ` with constant weights; the weights get no gradient.
pub fn attention_fuse_hard(tape: &mut Tape, branch_logits: &[Var], weights: &[f64]) -> Result<Var> {
    if weights.len() != branch_logits.len() {
        return Err(Error::ShapeMismatch {
            op: "attention_fuse_hard",
            lhs: vec![branch_logits.len()],
            rhs: vec![weights.len()],
        });
    }
    let w = tape.constant(Tensor::from_vec(weights.to_vec()));
    weighted_branch_sum(tape, branch_logits, w, false)
}

/// `Σᵢ wᵢ·zᵢ` with `weights` of shape `n` on the tape.
pub fn attention_fuse_soft_scalar(tape: &mut Tape, branch_logits: &[Var], weights: Var) -> Result<Var> {
    weighted_branch_sum(tape, branch_logits, weights, false)
}

/// `out[·,c] = Σᵢ W[i,c]·zᵢ[·,c]` with `weights` of shape `n×C`.
pub fn attention_fuse_soft_perclass(tape: &mut Tape, branch_logits: &[Var], weights: Var) -> Result<Var> {
    weighted_branch_sum(tape, branch_logits, weights, true)
}

fn weighted_branch_sum(tape: &mut Tape, branches: &[Var], weights: Var, per_class: bool) -> Result<Var> {
    if branches.is_empty() {
        return Err(Error::invalid("fusion needs at least one branch"));
    }
    tape.check(weights)?;
    for &b in branches {
        tape.check(b)?;
    }
    let n = branches.len();
    let shape = tape.value(branches[0]).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::InvalidShape {
            shape,
            reason: "branch logits must be N×C".into(),
        });
    }
    for &b in &branches[1..] {
        if tape.value(b).shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "fuse branches",
                lhs: shape,
                rhs: tape.value(b).shape().to_vec(),
            });
        }
    }
    let c = shape[1];
    let expected = if per_class { vec![n, c] } else { vec![n] };
    let wv = tape.value(weights);
    if wv.shape() != expected.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "fuse weights",
            lhs: expected,
            rhs: wv.shape().to_vec(),
        });
    }
    let w = wv.data().to_vec();
    let weight_at = |i: usize, col: usize| if per_class { w[i * c + col] } else { w[i] };

    let mut out = vec![0.0; shape.iter().product()];
    for (i, &b) in branches.iter().enumerate() {
        let z = tape.value(b).data();
        for (j, (o, &zj)) in out.iter_mut().zip(z).enumerate() {
            *o += weight_at(i, j % c) * zj;
        }
    }
    let out = Tensor::new(shape, out)?;
    let mut inputs = branches.to_vec();
    inputs.push(weights);
    tape.record(&inputs, out, FuseBackward { n, c, per_class })
}

struct FuseBackward {
    n: usize,
    c: usize,
    per_class: bool,
}

impl BackwardRule for FuseBackward {
    fn name(&self) -> &'static str {
        "attention_fuse"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (n, c) = (self.n, self.c);
        let w = inputs[n].data();
        let weight_at = |i: usize, col: usize| if self.per_class { w[i * c + col] } else { w[i] };
        let mut grads: Vec<Option<Vec<f64>>> = (0..n)
            .map(|i| {
                needs[i].then(|| g.iter().enumerate().map(|(j, &gj)| gj * weight_at(i, j % c)).collect())
            })
            .collect();
        let gw = needs[n].then(|| {
            let mut gw = vec![0.0; if self.per_class { n * c } else { n }];
            for (i, input) in inputs.iter().enumerate().take(n) {
                let z = input.data();
                for (j, (&gj, &zj)) in g.iter().zip(z).enumerate() {
                    let slot = if self.per_class { i * c + j % c } else { i };
                    gw[slot] += gj * zj;
                }
            }
            gw
        });
        grads.push(gw);
        grads
    }
}
