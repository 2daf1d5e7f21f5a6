//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every op whose inputs require gradients, in execution
//! order. [`Tape::backward`] walks the records in reverse and accumulates
//! gradients by addition, so a value consumed by several ops (a stage output
//! feeding both its branch head and the next stage) receives the sum of all
//! paths.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

/// Backward rule of a recorded op.
///
/// `inputs` are the op's input values in recording order, `grad_out` is the
/// upstream gradient (same length as `output`). Entry `i` of the result is the
/// gradient w.r.t. input `i`; it is ignored when `needs[i]` is false, so rules
/// may return `None` there and skip the work.
pub trait BackwardRule {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_out: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<usize>,
    rule: Option<Box<dyn BackwardRule>>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf value.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Node {
            value,
            inputs: Vec::new(),
            rule: None,
            requires_grad,
            grad: None,
        })
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        assert_eq!(var.tape, self.id, "variable belongs to another tape");
        &self.nodes[var.index].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.index].requires_grad
    }

    /// Gradient accumulated into a leaf by the last [`backward`](Self::backward),
    /// or `None` for values that do not require gradients.
    pub fn grad(&self, var: Var) -> Option<Tensor> {
        assert_eq!(var.tape, self.id, "variable belongs to another tape");
        let node = &self.nodes[var.index];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub(crate) fn check(&self, var: Var) -> Result<()> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(())
    }

    fn push(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Records the result of an op. The backward rule is kept only when some
    /// input requires gradients.
    pub fn record(
        &mut self,
        inputs: &[Var],
        value: Tensor,
        rule: impl BackwardRule + 'static,
    ) -> Result<Var> {
        for &v in inputs {
            self.check(v)?;
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.index].requires_grad);
        let node = if requires_grad {
            Node {
                value,
                inputs: inputs.iter().map(|v| v.index).collect(),
                rule: Some(Box::new(rule)),
                requires_grad: true,
                grad: None,
            }
        } else {
            Node {
                value,
                inputs: Vec::new(),
                rule: None,
                requires_grad: false,
                grad: None,
            }
        };
        Ok(self.push(node))
    }

    /// Back-propagates from a scalar `loss`. Afterwards every leaf that
    /// requires gradients holds d(loss)/d(leaf); leaves the loss does not
    /// depend on hold zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check(loss)?;
        let loss_shape = self.nodes[loss.index].value.shape().to_vec();
        if self.nodes[loss.index].value.len() != 1 {
            return Err(Error::NotScalar(loss_shape));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.index + 1];
        grads[loss.index] = Some(vec![1.0]);

        for i in (0..=loss.index).rev() {
            let node = &self.nodes[i];
            if node.rule.is_none() {
                continue;
            }
            let Some(grad_out) = grads[i].take() else {
                continue;
            };
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|&j| self.nodes[j].requires_grad)
                .collect();
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let rule = node.rule.as_ref().expect("checked above");
            let input_grads = rule.backward(&inputs, &node.value, &grad_out, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", rule.name());
            for ((&j, g), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                if !need {
                    continue;
                }
                let Some(g) = g else { continue };
                match &mut grads[j] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
        }

        for (i, node) in self.nodes.iter_mut().enumerate() {
            if node.requires_grad && node.rule.is_none() {
                let g = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                node.grad = Some(g);
            }
        }
        Ok(())
    }

    // ---- elementwise and reductions ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryKind::Mul)
    }

    /// `a ∘ b` elementwise. `b` may be a one-element tensor, broadcast over `a`.
    pub fn elementwise(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let broadcast = if av.shape() == bv.shape() {
            false
        } else if bv.len() == 1 {
            true
        } else {
            return Err(Error::ShapeMismatch {
                op: kind.name(),
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        };
        let f = kind.apply();
        let data: Vec<f64> = if broadcast {
            let s = bv.data()[0];
            av.data().iter().map(|&x| f(x, s)).collect()
        } else {
            av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect()
        };
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.record(&[a, b], out, Elementwise { kind, broadcast })
    }

    /// Multiplies by a constant that is not tracked.
    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(|x| x * factor);
        self.record(&[a], out, Scale(factor))
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = Tensor::scalar(self.value(a).sum());
        self.record(&[a], out, SumAll)
    }

    /// Matrix product of an `M×K` and a `K×N` tensor.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, 0.0, &mut out);
        let out = Tensor::new(vec![m, n], out)?;
        self.record(&[a, b], out, MatMul { m, k, n })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

impl BinaryKind {
    fn name(self) -> &'static str {
        match self {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        }
    }

    fn apply(self) -> fn(f64, f64) -> f64 {
        match self {
            BinaryKind::Add => |x, y| x + y,
            BinaryKind::Sub => |x, y| x - y,
            BinaryKind::Mul => |x, y| x * y,
        }
    }
}

struct Elementwise {
    kind: BinaryKind,
    broadcast: bool,
}

impl BackwardRule for Elementwise {
    fn name(&self) -> &'static str {
        self.kind.name()
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let b_at = |i: usize| if self.broadcast { b[0] } else { b[i] };
        let ga = needs[0].then(|| match self.kind {
            BinaryKind::Add | BinaryKind::Sub => g.to_vec(),
            BinaryKind::Mul => g.iter().enumerate().map(|(i, &gi)| gi * b_at(i)).collect(),
        });
        let gb = needs[1].then(|| {
            let per_elem: Vec<f64> = match self.kind {
                BinaryKind::Add => g.to_vec(),
                BinaryKind::Sub => g.iter().map(|&gi| -gi).collect(),
                BinaryKind::Mul => g.iter().zip(a).map(|(&gi, &ai)| gi * ai).collect(),
            };
            if self.broadcast {
                vec![per_elem.iter().sum()]
            } else {
                per_elem
            }
        });
        vec![ga, gb]
    }
}

struct Scale(f64);

impl BackwardRule for Scale {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.iter().map(|&x| x * self.0).collect())]
    }
}

struct SumAll;

impl BackwardRule for SumAll {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(vec![g[0]; inputs[0].len()])]
    }
}

struct MatMul {
    m: usize,
    k: usize,
    n: usize,
}

impl BackwardRule for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (m, k, n) = (self.m, self.k, self.n);
        // dA = G·Bᵀ, dB = Aᵀ·G
        let ga = needs[0].then(|| {
            let mut out = vec![0.0; m * k];
            gemm(m, n, k, g, false, inputs[1].data(), true, 0.0, &mut out);
            out
        });
        let gb = needs[1].then(|| {
            let mut out = vec![0.0; k * n];
            gemm(k, m, n, inputs[0].data(), true, g, false, 0.0, &mut out);
            out
        });
        vec![ga, gb]
    }
}

/// Compares the tape gradient of a scalar function against central finite
/// differences at every coordinate of `x`.
///
/// Returns `max_i |analytic_i − numeric_i| / max(1, |analytic_i|)`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    finite_diff_check_at(f, x, step, &coords)
}

/// [`finite_diff_check`] restricted to the listed coordinates.
pub fn finite_diff_check_at<F>(mut f: F, x: &Tensor, step: f64, coords: &[usize]) -> Result<f64>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::invalid(format!("finite-difference step must be > 0, got {step}")));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let loss = f(&mut tape, xv)?;
    let loss_value = tape.value(loss).data()[0];
    if !loss_value.is_finite() {
        return Err(Error::NonFinite { index: 0 });
    }
    tape.backward(loss)?;
    let analytic = tape.grad(xv).expect("leaf requires grad");

    let mut eval = |point: Tensor, index: usize| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(point, false);
        let out = f(&mut tape, v)?;
        let value = tape.value(out);
        if value.len() != 1 {
            return Err(Error::NotScalar(value.shape().to_vec()));
        }
        let y = value.data()[0];
        if !y.is_finite() {
            return Err(Error::NonFinite { index });
        }
        Ok(y)
    };

    let mut worst = 0.0f64;
    for &i in coords {
        if i >= x.len() {
            return Err(Error::invalid(format!("coordinate {i} out of range for {} values", x.len())));
        }
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval(plus, i)? - eval(minus, i)?) / (2.0 * step);
        let a = analytic.data()[i];
        if !a.is_finite() {
            return Err(Error::NonFinite { index: i });
        }
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn add_is_componentwise() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2], &[3.0, 4.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn mul_by_scalar_zero_annihilates() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 2], &[1.5, -2.0, 3.0, 7.0]));
        let z = tape.constant(Tensor::scalar(0.0));
        let y = tape.mul(x, z).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 2]);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn elementwise_rejects_mismatch_with_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[3, 2]));
        match tape.sub(a, b) {
            Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![3, 2]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn matmul_small_cases() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[1, 1], &[2.0]));
        let b = tape.constant(t(&[1, 1], &[3.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[6.0]);

        let i3 = tape.constant(Tensor::eye(3));
        let m = t(&[3, 2], &[1.0, -2.0, 0.5, 4.0, 9.0, -1.0]);
        let mv = tape.constant(m.clone());
        let out = tape.matmul(i3, mv).unwrap();
        assert!(tape.value(out).bit_eq(&m));

        let bad = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(tape.matmul(i3, bad).is_err());
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[0.1, 0.2, -0.3, 4.0, 5.0, 6.0]), true);
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::ones(&[2]), true);
        assert!(matches!(tape.backward(x), Err(Error::NotScalar(_))));

        let mut other = Tape::new();
        let y = other.leaf(Tensor::scalar(1.0), true);
        assert!(matches!(tape.backward(y), Err(Error::ForeignVar)));
    }

    #[test]
    fn consumers_accumulate() {
        // loss = sum(3x) + sum(x*x); x used by two paths.
        let x0 = t(&[3], &[0.5, -1.0, 2.0]);
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone(), true);
        let a = tape.scale(x, 3.0).unwrap();
        let sa = tape.sum(a).unwrap();
        let b = tape.mul(x, x).unwrap();
        let sb = tape.sum(b).unwrap();
        let loss = tape.add(sa, sb).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(x).unwrap();
        for (gi, xi) in g.data().iter().zip(x0.data()) {
            assert_eq!(*gi, 3.0 + 2.0 * xi);
        }
    }

    #[test]
    fn unrecorded_when_nothing_requires_grad() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::ones(&[2]));
        let b = tape.add(a, a).unwrap();
        assert!(!tape.requires_grad(b));
    }

    #[test]
    fn finite_diff_on_sum_and_square() {
        let x = t(&[4], &[0.3, -1.2, 5.0, 2.5]);
        let err = finite_diff_check(|tape, v| tape.sum(v), &x, 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");

        let x = t(&[1], &[3.0]);
        let err = finite_diff_check(
            |tape, v| {
                let sq = tape.mul(v, v)?;
                tape.sum(sq)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn finite_diff_reports_non_finite_coordinate() {
        // f(x) = sum(x * (1/x_1 ...)) is awkward to build; use a huge scale
        // so the perturbed evaluation overflows at coordinate 1 only.
        let x = t(&[2], &[1.0, 1e308]);
        let err = finite_diff_check(
            |tape, v| {
                let y = tape.scale(v, 10.0)?;
                tape.sum(y)
            },
            &x,
            1e-5,
        );
        assert!(matches!(err, Err(Error::NonFinite { .. })), "{err:?}");
    }

    #[test]
    fn finite_diff_rejects_bad_step() {
        let x = Tensor::ones(&[1]);
        assert!(finite_diff_check(|tape, v| tape.sum(v), &x, 0.0).is_err());
    }
}
