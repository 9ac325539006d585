use std::sync::Arc;

use super::tape::{Gradients, ParamId, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Named, ordered collection of trainable tensors.
///
/// Values sit behind `Arc` so tapes on other threads can share a snapshot;
/// the optimizer copies on write only while a snapshot is still alive.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<S> {
    names: Vec<String>,
    values: Vec<Arc<Tensor<S>>>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(Arc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<S>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v.as_ref()))
    }

    /// Puts a parameter on `tape` (cached per tape).
    pub fn var(&self, tape: &Tape<S>, id: ParamId) -> Var {
        tape.param(id, &self.values[id.0])
    }

    /// One gradient per parameter, zero-filled for parameters the loss never touched.
    pub fn gradients(&self, grads: &Gradients<S>) -> Vec<Tensor<S>> {
        self.ids()
            .map(|id| {
                grads
                    .param(id)
                    .unwrap_or_else(|| Tensor::zeros(self.get(id).shape()))
            })
            .collect()
    }

    pub fn zero_gradients(&self) -> Vec<Tensor<S>> {
        self.values.iter().map(|v| Tensor::zeros(v.shape())).collect()
    }

    pub fn total_elements(&self) -> usize {
        self.values.iter().map(|v| v.numel()).sum()
    }

    pub(crate) fn check_shapes(&self, grads: &[Tensor<S>]) -> Result<()> {
        if grads.len() != self.len() {
            return Err(Error::Shape {
                op: "gradients",
                shapes: format!("{} gradients for {} parameters", grads.len(), self.len()),
            });
        }
        for (id, g) in self.ids().zip(grads) {
            if g.shape() != self.get(id).shape() {
                return Err(Error::shape("gradients", &[self.get(id).shape(), g.shape()]));
            }
        }
        Ok(())
    }
}

/// Adds `src` into `dst` elementwise (gradient accumulation).
pub fn accumulate<S: Scalar>(dst: &mut [Tensor<S>], src: &[Tensor<S>]) {
    for (d, s) in dst.iter_mut().zip(src) {
        for (x, &y) in d.data_mut().iter_mut().zip(s.data()) {
            *x = *x + y;
        }
    }
}

pub fn scale_all<S: Scalar>(grads: &mut [Tensor<S>], k: S) {
    for g in grads {
        g.data_mut().iter_mut().for_each(|x| *x = *x * k);
    }
}
