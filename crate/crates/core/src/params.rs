//! Named parameter storage and per-pass binding of parameters to tape leaves.

use std::collections::HashMap;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Frozen parameters get no gradient and are skipped by the optimizer.
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_value",
                lhs: p.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Total number of scalar values held by trainable parameters.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }
}

/// Maps each parameter to the tape leaf that carries it during one forward
/// pass. A parameter referenced several times (a shared classifier) binds to
/// a single leaf, so the tape sums the gradients of every use.
#[derive(Default)]
pub struct Binder {
    bound: HashMap<ParamId, Var>,
    inference: bool,
}

impl Binder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Binds every parameter as a constant; nothing is recorded for backward.
    pub fn inference() -> Self {
        Binder {
            bound: HashMap::new(),
            inference: true,
        }
    }

    /// Uses `var` in place of parameter `id`. Used by gradient checks to
    /// perturb one parameter while the rest stay at their stored values.
    pub fn bind_override(&mut self, id: ParamId, var: Var) {
        self.bound.insert(id, var);
    }

    pub fn param(&mut self, tape: &mut Tape, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = tape.leaf(p.value.clone(), !self.inference && p.trainable);
        self.bound.insert(id, v);
        v
    }

    pub fn bound_var(&self, id: ParamId) -> Option<Var> {
        self.bound.get(&id).copied()
    }

    /// Per-parameter gradients after `tape.backward`, for every trainable
    /// parameter the pass touched.
    pub fn gradients(&self, tape: &Tape) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = self
            .bound
            .iter()
            .filter_map(|(&id, &v)| tape.grad(v).map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

/// Adds the gradients from a finished pass into the store's `grad` buffers.
pub fn accumulate_grads(store: &mut ParamStore, grads: Vec<(ParamId, Tensor)>) {
    for (id, g) in grads {
        let p = store.get_mut(id);
        if !p.trainable {
            continue;
        }
        for (acc, v) in p.grad.data_mut().iter_mut().zip(g.data()) {
            *acc += v;
        }
    }
}
