//! Define-by-run gradient tape.
//!
//! Every operation appends a node holding its output value and a one-shot
//! backward closure. [`Tape::backward`] replays the nodes in reverse order,
//! hands gradients of leaves and parameters back in a [`Gradients`] value and
//! clears the tape. Recording a new leaf starts the next forward pass.

use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    idx: u32,
    gen: u32,
}

/// What a backward closure sees: the op inputs, its output, the incoming
/// gradient, and which inputs actually need a gradient.
pub struct BackwardCtx<'a, T: Real> {
    inputs: Vec<&'a Tensor<T>>,
    output: &'a Tensor<T>,
    grad: &'a [T],
    needs: Vec<bool>,
}

impl<'a, T: Real> BackwardCtx<'a, T> {
    pub fn input(&self, i: usize) -> &'a Tensor<T> {
        self.inputs[i]
    }

    pub fn output(&self) -> &'a Tensor<T> {
        self.output
    }

    pub fn grad(&self) -> &'a [T] {
        self.grad
    }

    pub fn needs(&self, i: usize) -> bool {
        self.needs[i]
    }
}

/// Computes one optional gradient per op input.
pub type BackwardFn<T> = Box<dyn FnOnce(&BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>>>;

enum Origin {
    Leaf,
    Param(ParamId),
    Op,
}

struct Node<T: Real> {
    value: Tensor<T>,
    requires_grad: bool,
    inputs: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    origin: Origin,
}

pub struct Tape<T: Real = f64> {
    nodes: Vec<Node<T>>,
    gen: u32,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<T: Real = f64> {
    gen: u32,
    leaves: HashMap<u32, Vec<T>>,
    params: Vec<(ParamId, Vec<T>)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a `requires_grad` leaf recorded in the pass that produced
    /// these gradients.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        if v.gen != self.gen {
            return None;
        }
        self.leaves.get(&v.idx).map(|g| g.as_slice())
    }

    pub fn params(&self) -> &[(ParamId, Vec<T>)] {
        &self.params
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.as_slice())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            gen: 0,
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn begin_recording(&mut self) {
        if self.consumed {
            self.consumed = false;
        }
    }

    fn push(&mut self, node: Node<T>) -> Var {
        let idx = self.nodes.len() as u32;
        self.nodes.push(node);
        Var { idx, gen: self.gen }
    }

    /// Records an input; gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.begin_recording();
        let requires_grad = t.requires_grad();
        let mut value = t;
        value.set_requires_grad(false);
        self.push(Node {
            value,
            requires_grad,
            inputs: Vec::new(),
            backward: None,
            origin: Origin::Leaf,
        })
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let mut t = t;
        t.set_requires_grad(false);
        self.leaf(t)
    }

    /// Records a snapshot of a stored parameter. Frozen parameters and
    /// buffers enter as constants.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.begin_recording();
        let entry = store.entry(id);
        let requires_grad = entry.tensor.requires_grad();
        let mut value = entry.tensor.clone();
        value.set_requires_grad(false);
        self.push(Node {
            value,
            requires_grad,
            inputs: Vec::new(),
            backward: None,
            origin: Origin::Param(id),
        })
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.gen != self.gen || v.idx as usize >= self.nodes.len() {
            return Err(if self.consumed {
                TensorError::StaleTape
            } else {
                TensorError::StaleVar
            });
        }
        Ok(v.idx as usize)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<T>> {
        Ok(&self.nodes[self.index(v)?].value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(self.value(v)?.shape())
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        Ok(self.nodes[self.index(v)?].requires_grad)
    }

    /// Appends an operation node. Used by every built-in op and available to
    /// downstream crates for fused kernels.
    pub fn push_op(
        &mut self,
        op: &'static str,
        inputs: &[Var],
        output: Tensor<T>,
        backward: BackwardFn<T>,
    ) -> Result<Var> {
        let mut idx = Vec::with_capacity(inputs.len());
        for &v in inputs {
            idx.push(self.index(v)?);
        }
        if !output.all_finite() {
            return Err(TensorError::NonFinite { op });
        }
        let requires_grad = idx.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push(Node {
            value: output,
            requires_grad,
            inputs: idx,
            backward: requires_grad.then_some(backward),
            origin: Origin::Op,
        }))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Leaf gradients are accumulated additively when a leaf feeds several
    /// ops. The tape is cleared afterwards; a second call without a new
    /// forward pass fails with [`TensorError::StaleTape`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed || self.nodes.is_empty() {
            return Err(TensorError::StaleTape);
        }
        let root = self.index(loss)?;
        let root_shape = self.nodes[root].value.shape();
        if self.nodes[root].value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(root_shape.to_vec()));
        }

        let mut grads: Vec<Option<Vec<T>>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(vec![T::ONE]);
        let mut out = Gradients {
            gen: self.gen,
            leaves: HashMap::new(),
            params: Vec::new(),
        };

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            match self.nodes[i].origin {
                Origin::Leaf => {
                    out.leaves.insert(i as u32, g);
                    continue;
                }
                Origin::Param(id) => {
                    out.params.push((id, g));
                    continue;
                }
                Origin::Op => {}
            }
            let Some(bw) = self.nodes[i].backward.take() else {
                continue;
            };
            let node = &self.nodes[i];
            let ctx = BackwardCtx {
                inputs: node.inputs.iter().map(|&j| &self.nodes[j].value).collect(),
                output: &node.value,
                grad: &g,
                needs: node
                    .inputs
                    .iter()
                    .map(|&j| self.nodes[j].requires_grad)
                    .collect(),
            };
            let input_grads = bw(&ctx);
            let inputs = node.inputs.clone();
            for (j, gi) in inputs.into_iter().zip(input_grads) {
                let Some(gi) = gi else { continue };
                if !self.nodes[j].requires_grad {
                    continue;
                }
                match &mut grads[j] {
                    Some(acc) => {
                        for (a, x) in acc.iter_mut().zip(gi) {
                            *a += x;
                        }
                    }
                    slot @ None => *slot = Some(gi),
                }
            }
        }

        out.params.reverse();
        self.nodes.clear();
        self.consumed = true;
        self.gen = self.gen.wrapping_add(1);
        Ok(out)
    }
}
