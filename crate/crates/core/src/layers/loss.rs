use crate::autograd::{BackwardRule, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax of an `N×C` matrix, computed after subtracting each
/// row's maximum.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    assert_eq!(logits.rank(), 2, "softmax_rows needs a matrix");
    let c = logits.shape()[1];
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::new(logits.shape().to_vec(), out).expect("same shape")
}

/// Mean over the batch of `−log softmax(logits)[label]`.
pub fn softmax_cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    tape.check(logits)?;
    let lv = tape.value(logits);
    if lv.rank() != 2 || lv.shape()[0] != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy",
            lhs: lv.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let (n, c) = (lv.shape()[0], lv.shape()[1]);
    for (i, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(Error::LabelOutOfRange {
                sample: i,
                label,
                classes: c,
            });
        }
    }
    let mut loss = 0.0;
    for (row, &label) in lv.data().chunks(c).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        loss += lse - row[label];
    }
    let probs = softmax_rows(lv);
    tape.record(
        &[logits],
        Tensor::scalar(loss / n as f64),
        CrossEntropyBackward {
            probs,
            labels: labels.to_vec(),
        },
    )
}

struct CrossEntropyBackward {
    probs: Tensor,
    labels: Vec<usize>,
}

impl BackwardRule for CrossEntropyBackward {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let n = self.labels.len();
        let c = self.probs.shape()[1];
        let scale = g[0] / n as f64;
        let mut d = self.probs.data().to_vec();
        for (i, &label) in self.labels.iter().enumerate() {
            d[i * c + label] -= 1.0;
        }
        for v in &mut d {
            *v *= scale;
        }
        vec![Some(d)]
    }
}
