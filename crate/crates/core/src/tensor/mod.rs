//! Dense-tensor engine: n-dimensional f32 arrays, reverse-mode autodiff on
//! an operation tape, the AdamW optimizer, and the weight-checkpoint format.

pub mod checkpoint;
pub mod kernels;
pub mod ops;
pub mod optim;
pub mod tape;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f32>,
    /// Present iff the tensor participates in gradient computation.
    /// The buffer always has the same length as `data`.
    grad: Option<Mutex<Vec<f32>>>,
}

/// An n-dimensional row-major f32 array. Values are immutable once an
/// operation has written them; clones share the underlying buffer.
#[derive(Clone)]
pub struct Tensor {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, grad={})",
            self.inner.id,
            self.inner.shape,
            self.requires_grad()
        )
    }
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::Shape(format!("zero extent in shape {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} implies {numel} elements, buffer has {}",
                data.len()
            )));
        }
        Ok(Tensor::raw(shape.to_vec(), data, false))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::raw(shape.to_vec(), vec![0.0; shape.iter().product()], false)
    }

    pub fn full(shape: &[usize], value: f32) -> Tensor {
        Tensor::raw(shape.to_vec(), vec![value; shape.iter().product()], false)
    }

    pub fn scalar(value: f32) -> Tensor {
        Tensor::raw(vec![1], vec![value], false)
    }

    pub(crate) fn raw(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let grad = requires_grad.then(|| Mutex::new(vec![0.0; data.len()]));
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                grad,
            }),
        }
    }

    /// A copy of this tensor that participates in gradient computation.
    /// The new tensor has a fresh identity and a zeroed gradient buffer.
    pub fn with_grad(&self) -> Tensor {
        Tensor::raw(self.inner.shape.clone(), self.inner.data.clone(), true)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.inner.data
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.grad.is_some()
    }

    /// The value of a single-element tensor.
    pub fn item(&self) -> Result<f32> {
        if self.numel() != 1 {
            return Err(Error::Shape(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.inner.data[0])
    }

    /// Element at a full index, for tests and small readers.
    pub fn at(&self, index: &[usize]) -> f32 {
        assert_eq!(index.len(), self.inner.shape.len());
        let mut flat = 0;
        for (i, (&ix, &ext)) in index.iter().zip(&self.inner.shape).enumerate() {
            assert!(ix < ext, "index {ix} out of range at axis {i}");
            flat = flat * ext + ix;
        }
        self.inner.data[flat]
    }

    /// Snapshot of the gradient buffer, if the tensor has one.
    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.grad.as_ref().map(|g| lock(g).clone())
    }

    pub fn zero_grad(&self) {
        if let Some(g) = &self.inner.grad {
            lock(g).fill(0.0);
        }
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f32]) {
        let g = self
            .inner
            .grad
            .as_ref()
            .expect("accumulate_grad on tensor without gradient buffer");
        let mut guard = lock(g);
        debug_assert_eq!(guard.len(), delta.len());
        for (dst, &d) in guard.iter_mut().zip(delta) {
            *dst += d;
        }
    }

    /// A tensor sharing no state with `self`, carrying `data` and keeping a
    /// gradient buffer iff `self` has one. Used by the optimizer to publish
    /// updated parameter values.
    pub(crate) fn replace_data(&self, data: Vec<f32>) -> Tensor {
        Tensor::raw(self.inner.shape.clone(), data, self.requires_grad())
    }
}

fn lock(m: &Mutex<Vec<f32>>) -> std::sync::MutexGuard<'_, Vec<f32>> {
    m.lock().unwrap_or_else(|poison| poison.into_inner())
}
