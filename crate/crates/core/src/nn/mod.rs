//! Small deterministic neural-network stack with hand-written backward
//! passes. Everything is `f64` and single-threaded.

mod checkpoint;
mod gradcheck;
mod gru;
mod layers;
mod optim;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{check_layer, grad_check, GradCheckReport};
pub use gru::{Gru, GruCell};
pub use layers::{BatchNorm, Conv2d, Layer, Linear, Relu, Reshape, Sequential, Upsample2x};
pub use optim::Adam;

use rand::Rng;

use crate::error::{Error, Result};

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(Error::shape(format!("tensor rank must be 1..=4, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Shape as `(N, C, H, W)`; rank-2 tensors are treated as `(N, F, 1, 1)`.
    pub fn nchw(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            [n, f] => Ok((n, f, 1, 1)),
            _ => Err(Error::shape(format!("expected rank 2 or 4, got {:?}", self.shape))),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn debug_check(&self) {
        debug_assert!(self.is_finite(), "non-finite tensor of shape {:?}", self.shape);
    }
}

/// A named parameter buffer with its gradient accumulator. Buffers that
/// are not `trainable` (batch-norm running statistics) are saved in
/// checkpoints but skipped by the optimizer and gradient checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Vec<f64>) -> Self {
        let grad = vec![0.0; value.len()];
        Self {
            name: name.into(),
            value,
            grad,
            trainable: true,
        }
    }

    pub fn buffer(name: impl Into<String>, value: Vec<f64>) -> Self {
        Self {
            trainable: false,
            ..Self::new(name, value)
        }
    }

    /// Uniform in `±bound`.
    pub fn uniform(name: impl Into<String>, len: usize, bound: f64, rng: &mut impl Rng) -> Self {
        let value = (0..len).map(|_| rng.random_range(-bound..=bound)).collect();
        Self::new(name, value)
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// How a forward pass behaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; activations cached for backward.
    Train,
    /// Running statistics; activations cached for backward.
    Frozen,
    /// Running statistics; nothing cached.
    Infer,
}

impl Mode {
    pub fn caches(self) -> bool {
        self != Mode::Infer
    }
}

/// `C = A·B (+ C)` with optional transposes, all row-major.
/// `A` is m×k (stored k×m when `ta`), `B` is k×n (stored n×k when `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], acc: bool) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if acc { 1.0 } else { 0.0 };
    // SAFETY: the slices hold at least the addressed extents, checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `ln(1 + eˣ)`, overflow-safe.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Derivative of [`softplus`].
pub fn softplus_grad(x: f64) -> f64 {
    sigmoid(x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
