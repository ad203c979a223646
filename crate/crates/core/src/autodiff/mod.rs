//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tensor`] is a reference-counted node holding a row-major buffer,
//! its shape and (when it takes part in a differentiable computation) the
//! closure that maps the output gradient onto its parents. Operations build
//! the graph eagerly; [`Tensor::backward`] walks it once in reverse
//! topological order and accumulates gradients into the leaves that were
//! created with `requires_grad`.
//!
//! Tensors built only from constants carry no graph linkage and are cheap
//! to share across threads.

mod conv;
mod gradcheck;
mod norm;
mod ops;

pub use conv::Padding;
pub use gradcheck::{grad_check, GradCheckReport};
pub use norm::{BatchNormStats, NormAxis};
pub use ops::ElemOp;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock, RwLockReadGuard};

use crate::error::{Error, Result};

/// Maps the gradient of a node's output to one optional gradient per parent.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

struct Node {
    shape: Vec<usize>,
    data: RwLock<Vec<f64>>,
    grad: Mutex<Option<Vec<f64>>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
    consumed: AtomicBool,
}

/// Dense array with optional gradient tracking.
#[derive(Clone)]
pub struct Tensor(Arc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let preview: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &preview)
            .finish()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(
        data: Vec<f64>,
        shape: Vec<usize>,
        requires_grad: bool,
        parents: Vec<Tensor>,
        backward: Option<BackwardFn>,
    ) -> Tensor {
        debug_assert_eq!(data.len(), numel_of(&shape));
        Tensor(Arc::new(Node {
            shape,
            data: RwLock::new(data),
            grad: Mutex::new(None),
            requires_grad,
            parents,
            backward,
            consumed: AtomicBool::new(false),
        }))
    }

    /// Constant tensor. Fails when `data.len()` does not match the shape.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if data.len() != numel_of(shape) {
            return Err(Error::config(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor::build(data, shape.to_vec(), false, Vec::new(), None))
    }

    /// Learnable leaf tensor.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if data.len() != numel_of(shape) {
            return Err(Error::config(format!(
                "parameter length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor::build(data, shape.to_vec(), true, Vec::new(), None))
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::build(vec![value], Vec::new(), false, Vec::new(), None)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::build(vec![0.0; numel_of(shape)], shape.to_vec(), false, Vec::new(), None)
    }

    pub fn from_vec(data: Vec<f64>) -> Tensor {
        let n = data.len();
        Tensor::build(data, vec![n], false, Vec::new(), None)
    }

    /// Result of an operation. Parents that do not require gradients are
    /// dropped from the graph; when none do, the result is a plain constant.
    pub(crate) fn from_op(
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        if parents.iter().any(|p| p.requires_grad()) {
            Tensor::build(data, shape, true, parents, Some(backward))
        } else {
            Tensor::build(data, shape, false, Vec::new(), None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Leaf tensors have no graph linkage (parameters and constants).
    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<f64>> {
        self.0.data.read()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.read().clone()
    }

    /// Single element of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        let data = self.data();
        if data.len() != 1 {
            return Err(Error::config(format!(
                "item() needs one element, tensor has shape {:?}",
                self.shape()
            )));
        }
        Ok(data[0])
    }

    /// Replaces the values of a leaf tensor in place.
    pub fn set_data(&self, values: &[f64]) -> Result<()> {
        if !self.is_leaf() {
            return Err(Error::state("cannot overwrite the data of an interior graph node"));
        }
        let mut data = self.0.data.write();
        if values.len() != data.len() {
            return Err(Error::config(format!(
                "set_data: {} values for tensor of shape {:?}",
                values.len(),
                self.shape()
            )));
        }
        data.copy_from_slice(values);
        Ok(())
    }

    /// Mutable access to a leaf's buffer, used by optimizers.
    pub fn update_data<F: FnOnce(&mut [f64])>(&self, f: F) -> Result<()> {
        if !self.is_leaf() {
            return Err(Error::state("cannot update the data of an interior graph node"));
        }
        f(&mut self.0.data.write());
        Ok(())
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock() = None;
    }

    /// Same values, no graph linkage and no gradient tracking.
    pub fn detach(&self) -> Tensor {
        Tensor::build(self.to_vec(), self.0.shape.clone(), false, Vec::new(), None)
    }

    fn id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    /// Populates the gradients of every `requires_grad` leaf reachable from
    /// this scalar. A graph can be consumed only once.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::config(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if self.0.consumed.swap(true, Ordering::SeqCst) {
            return Err(Error::state(
                "backward() already ran on this graph; rebuild the forward pass first",
            ));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let order = self.topological_order();
        let mut pending: HashMap<usize, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);

        for node in order.iter().rev() {
            let Some(grad_out) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.0.backward {
                None => {
                    if node.requires_grad() {
                        let mut slot = node.0.grad.lock();
                        match slot.as_mut() {
                            Some(acc) => acc.iter_mut().zip(&grad_out).for_each(|(a, g)| *a += g),
                            None => *slot = Some(grad_out),
                        }
                    }
                }
                Some(backward) => {
                    let parent_grads = backward(&grad_out);
                    debug_assert_eq!(parent_grads.len(), node.0.parents.len());
                    for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), parent.numel());
                        match pending.get_mut(&parent.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, g)| *a += g),
                            None => {
                                pending.insert(parent.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes reachable from `self`, parents before children.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        // (node, children_pushed)
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            for parent in &node.0.parents {
                if parent.requires_grad() && !visited.contains(&parent.id()) {
                    stack.push((parent.clone(), false));
                }
            }
        }
        order
    }
}

/// Checks that every value is finite, naming the operation otherwise.
pub(crate) fn check_finite(op: &str, data: &[f64]) -> Result<()> {
    if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::numeric(format!("{op} produced {v} at index {i}")));
    }
    Ok(())
}
