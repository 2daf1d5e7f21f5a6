use crate::autograd::{BackwardRule, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Binder, ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

/// Fully connected layer computing `x·Wᵀ + b`.
#[derive(Clone, Debug)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl LinearLayer {
    pub fn new(store: &mut ParamStore, name: &str, in_features: usize, out_features: usize) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::zeros(&[out_features, in_features]),
            true,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_features]), true);
        LinearLayer {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn forward(&self, tape: &mut Tape, binder: &mut Binder, store: &ParamStore, x: Var) -> Result<Var> {
        let w = binder.param(tape, store, self.weight);
        let b = binder.param(tape, store, self.bias);
        linear(tape, x, w, b)
    }
}

/// `x: N×in`, `weight: out×in`, `bias: out` → `N×out`.
pub fn linear(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var> {
    tape.check(x)?;
    tape.check(weight)?;
    tape.check(bias)?;
    let (xv, wv, bv) = (tape.value(x), tape.value(weight), tape.value(bias));
    if xv.rank() != 2 || wv.rank() != 2 || xv.shape()[1] != wv.shape()[1] {
        return Err(Error::ShapeMismatch {
            op: "linear",
            lhs: xv.shape().to_vec(),
            rhs: wv.shape().to_vec(),
        });
    }
    let (n, k, m) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
    if bv.shape() != [m] {
        return Err(Error::ShapeMismatch {
            op: "linear bias",
            lhs: wv.shape().to_vec(),
            rhs: bv.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; n * m];
    for row in out.chunks_mut(m) {
        row.copy_from_slice(bv.data());
    }
    gemm(n, k, m, xv.data(), false, wv.data(), true, 1.0, &mut out);
    let out = Tensor::new(vec![n, m], out)?;
    tape.record(&[x, weight, bias], out, LinearBackward { n, k, m })
}

struct LinearBackward {
    n: usize,
    k: usize,
    m: usize,
}

impl BackwardRule for LinearBackward {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (n, k, m) = (self.n, self.k, self.m);
        let dx = needs[0].then(|| {
            let mut dx = vec![0.0; n * k];
            gemm(n, m, k, g, false, inputs[1].data(), false, 0.0, &mut dx);
            dx
        });
        let dw = needs[1].then(|| {
            let mut dw = vec![0.0; m * k];
            gemm(m, n, k, g, true, inputs[0].data(), false, 0.0, &mut dw);
            dw
        });
        let db = needs[2].then(|| {
            let mut db = vec![0.0; m];
            for row in g.chunks(m) {
                for (d, v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
            db
        });
        vec![dx, dw, db]
    }
}
