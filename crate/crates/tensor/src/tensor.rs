use std::cell::Cell;
use std::fmt;
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard};

use crate::error::{shape_err, Result, TensorError};
use crate::ops::Op;

thread_local! {
    static NO_GRAD_DEPTH: Cell<usize> = const { Cell::new(0) };
}

/// Runs `f` with graph recording disabled on the current thread.
///
/// Tensors created inside carry no backward linkage, so intermediates are
/// freed as soon as they go out of scope. The flag is per-thread: work
/// fanned out to other threads must enter `no_grad` itself.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Reset;
    impl Drop for Reset {
        fn drop(&mut self) {
            NO_GRAD_DEPTH.with(|d| d.set(d.get() - 1));
        }
    }
    NO_GRAD_DEPTH.with(|d| d.set(d.get() + 1));
    let _reset = Reset;
    f()
}

pub fn is_grad_enabled() -> bool {
    NO_GRAD_DEPTH.with(|d| d.get() == 0)
}

pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: RwLock<Vec<f64>>,
    pub(crate) grad: Mutex<Option<Vec<f64>>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Option<Op>,
}

/// Dense row-major f64 tensor. Cloning is cheap and shares storage.
#[derive(Clone)]
pub struct Tensor(pub(crate) Arc<Node>);

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

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Option<Op>) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Arc::new(Node {
            shape,
            data: RwLock::new(data),
            grad: Mutex::new(None),
            requires_grad,
            op,
        }))
    }

    fn checked(shape: &[usize], len: usize) -> Result<()> {
        if shape.contains(&0) {
            return Err(shape_err(
                "tensor",
                format!("zero-sized dimension in {shape:?}"),
            ));
        }
        if numel(shape) != len {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} needs {} values, got {len}", numel(shape)),
            ));
        }
        Ok(())
    }

    /// Constant leaf; never receives a gradient.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Self::checked(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Trainable leaf.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Self::checked(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn scalar(v: f64) -> Tensor {
        Self::build(Vec::new(), vec![v], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::build(shape.to_vec(), vec![0.0; numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        Self::build(shape.to_vec(), vec![v; numel(shape)], false, None)
    }

    /// Result of an op. Records `op` only when an input needs a gradient and
    /// recording is enabled on this thread.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, op: Op) -> Tensor {
        let track = is_grad_enabled() && op.parents().iter().any(|p| p.requires_grad());
        if track {
            Self::build(shape, data, true, Some(op))
        } else {
            Self::build(shape, data, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// True for tensors produced by a recorded op.
    pub fn has_graph(&self) -> bool {
        self.0.op.is_some()
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<f64>> {
        self.0.data.read().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.data()[0])
    }

    /// Overwrites the values of a leaf in place (optimizer, checkpoint load).
    pub fn set_data(&self, values: Vec<f64>) -> Result<()> {
        if self.0.op.is_some() {
            return Err(TensorError::Contract(
                "set_data on a non-leaf tensor".into(),
            ));
        }
        if values.len() != self.numel() {
            return Err(shape_err(
                "set_data",
                format!("expected {} values, got {}", self.numel(), values.len()),
            ));
        }
        *self.0.data.write().expect("tensor data lock poisoned") = values;
        Ok(())
    }

    pub(crate) fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        let mut guard = self.0.data.write().expect("tensor data lock poisoned");
        f(&mut guard);
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub(crate) fn with_grad<R>(&self, f: impl FnOnce(&mut Option<Vec<f64>>) -> R) -> R {
        let mut guard = self.0.grad.lock().expect("grad lock poisoned");
        f(&mut guard)
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        self.with_grad(|slot| match slot {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        });
    }

    /// Copy of the values with no graph linkage.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.shape.clone(), self.to_vec(), false, None)
    }

    pub(crate) fn id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}
