use crate::autograd::{BackwardRule, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Spatial mean per channel: `N×C×H×W → N×C`.
///
/// Adaptive average pooling to a 1×1 target and global average pooling are
/// the same operation, so branch heads and the plain classifier head both
/// use this.
pub fn global_avg_pool(tape: &mut Tape, x: Var) -> Result<Var> {
    tape.check(x)?;
    let xv = tape.value(x);
    let s = xv.shape();
    if s.len() != 4 {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "global_avg_pool input must be N×C×H×W".into(),
        });
    }
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    let out: Vec<f64> = xv
        .data()
        .chunks(hw)
        .map(|plane| plane.iter().sum::<f64>() / hw as f64)
        .collect();
    let out = Tensor::new(vec![n, c], out)?;
    tape.record(&[x], out, GapBackward { hw })
}

struct GapBackward {
    hw: usize,
}

impl BackwardRule for GapBackward {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let scale = 1.0 / self.hw as f64;
        let mut dx = Vec::with_capacity(g.len() * self.hw);
        for &gi in g {
            dx.extend(std::iter::repeat_n(gi * scale, self.hw));
        }
        vec![Some(dx)]
    }
}
