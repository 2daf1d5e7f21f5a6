use crate::error::{Error, Result};
use crate::params::ParamStore;

/// One heavy-ball step with L2 decay folded into the gradient:
/// `g' = g + λ·p`, `v ← μ·v + g'`, `p ← p − lr·v`.
pub fn sgd_momentum_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.len() != params.len() || velocity.len() != params.len() {
        return Err(Error::ShapeMismatch {
            op: "sgd_momentum_step",
            lhs: vec![params.len()],
            rhs: vec![grads.len(), velocity.len()],
        });
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + (g + weight_decay * *p);
        *p -= lr * *v;
    }
    Ok(())
}

/// Momentum SGD over every trainable parameter of a store.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(store: &ParamStore, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect(),
        }
    }

    /// Applies the accumulated `grad` buffers; frozen parameters are untouched.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if self.velocity.len() != store.len() {
            return Err(Error::invalid("optimizer was built for a different parameter store"));
        }
        for ((_, p), v) in store.iter_mut().zip(&mut self.velocity) {
            if !p.trainable {
                continue;
            }
            sgd_momentum_step(p.value.data_mut(), p.grad.data(), v, lr, self.momentum, self.weight_decay)?;
        }
        Ok(())
    }
}
