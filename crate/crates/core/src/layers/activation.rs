use crate::autograd::{BackwardRule, Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// `max(0, x)`; the subgradient at exactly zero is 0.
pub fn relu(tape: &mut Tape, x: Var) -> Result<Var> {
    tape.check(x)?;
    let out = tape.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
    tape.record(&[x], out, ReluBackward)
}

struct ReluBackward;

impl BackwardRule for ReluBackward {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let x = inputs[0].data();
        vec![Some(
            g.iter()
                .zip(x)
                .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                .collect(),
        )]
    }
}
