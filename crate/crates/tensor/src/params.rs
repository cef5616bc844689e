//! Named, long-lived model state.

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::Gradients;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Non-gradient state such as normalization running statistics.
    Buffer,
}

#[derive(Debug, Clone)]
pub struct ParamEntry<T: Real> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub kind: ParamKind,
    frozen: bool,
}

impl<T: Real> ParamEntry<T> {
    pub fn frozen(&self) -> bool {
        self.frozen
    }

    pub fn trainable(&self) -> bool {
        self.kind == ParamKind::Trainable && !self.frozen
    }
}

/// Insertion-ordered parameter registry. Order is the checkpoint order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Real = f64> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    fn insert(&mut self, name: &str, mut tensor: Tensor<T>, kind: ParamKind) -> Result<ParamId> {
        if self.find(name).is_some() {
            return Err(TensorError::Invalid {
                op: "param",
                msg: format!("duplicate parameter name `{name}`"),
            });
        }
        tensor.set_requires_grad(kind == ParamKind::Trainable);
        self.entries.push(ParamEntry {
            name: name.to_string(),
            tensor,
            kind,
            frozen: false,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn add(&mut self, name: &str, tensor: Tensor<T>) -> Result<ParamId> {
        self.insert(name, tensor, ParamKind::Trainable)
    }

    pub fn add_buffer(&mut self, name: &str, tensor: Tensor<T>) -> Result<ParamId> {
        self.insert(name, tensor, ParamKind::Buffer)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<T>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e))
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        let e = &mut self.entries[id.0];
        e.frozen = frozen;
        e.tensor
            .set_requires_grad(e.kind == ParamKind::Trainable && !frozen);
    }

    /// Adds the parameter gradients of one backward pass into each
    /// parameter's gradient buffer.
    pub fn accumulate(&mut self, grads: &Gradients<T>) -> Result<()> {
        for (id, g) in grads.params() {
            self.entries[id.0].tensor.accumulate_grad(g)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.tensor.zero_grad();
        }
    }

    /// Number of scalar values in trainable (including frozen) parameters.
    pub fn census(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.tensor.numel())
            .sum()
    }

    /// Census restricted to parameters whose name starts with `prefix`.
    pub fn census_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable && e.name.starts_with(prefix))
            .map(|e| e.tensor.numel())
            .sum()
    }
}
