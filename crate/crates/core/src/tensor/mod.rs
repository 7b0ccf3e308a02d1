//! Dense f32 tensors with a tape-based reverse-mode autodiff engine.

mod fd;
pub(crate) mod kernels;
mod tape;

pub use fd::finite_difference_gradient;
pub use tape::{Grads, Grid, Tape, Var};

use crate::{Error, Result};

/// Row-major f32 array with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        let expected = numel(&shape);
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self::new(shape, vec![0.0; n]).expect("zero extents are rejected by new")
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f32) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(value: f32) -> Self {
        Self { shape: Vec::new(), data: vec![value], requires_grad: false, grad: None }
    }

    pub fn from_rows(rows: &[&[f32]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f32> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::Contract(format!("item() on tensor of shape {:?}", self.shape))),
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
        if !requires_grad {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f32>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::Dimension(format!(
                "gradient of length {} for tensor of shape {:?}",
                grad.len(),
                self.shape
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        if numel(&shape) != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        self.grad = None;
        Ok(self)
    }

    /// Rows `indices` of the leading axis, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let lead = *self.shape.first().ok_or_else(|| Error::Dimension("select_rows on a scalar".into()))?;
        let stride = self.data.len() / lead.max(1);
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            if i >= lead {
                return Err(Error::Dimension(format!("row {i} out of range for extent {lead}")));
            }
            data.extend_from_slice(&self.data[i * stride..(i + 1) * stride]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor::new(shape, data)
    }

    /// Largest absolute elementwise difference to `other` (same shape required).
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(self.data.iter().zip(&other.data).fold(0.0f32, |m, (a, b)| m.max((a - b).abs())))
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::Dimension(format!("shape {shape:?} has a zero extent")));
    }
    Ok(())
}

/// Temperature softmax along the last axis, outside of any tape.
pub fn softmax_temperature(logits: &Tensor, tau: f32) -> Result<Tensor> {
    let k = check_softmax_args(logits.shape(), tau)?;
    let mut out = logits.data.clone();
    kernels::softmax_rows(&mut out, k, tau);
    Tensor::new(logits.shape.clone(), out)
}

pub(crate) fn check_softmax_args(shape: &[usize], tau: f32) -> Result<usize> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidHyperparameter(format!("temperature must be positive, got {tau}")));
    }
    let k = *shape.last().ok_or_else(|| Error::Dimension("softmax of a scalar".into()))?;
    if k < 2 {
        return Err(Error::Dimension(format!("softmax needs at least 2 classes, got shape {shape:?}")));
    }
    Ok(k)
}

/// Plain matrix product outside of any tape.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = kernels::matmul_dims(a.shape(), b.shape())?;
    let mut out = vec![0.0; m * n];
    kernels::gemm(m, k, n, a.data(), (k, 1), b.data(), (n, 1), &mut out, (n, 1), false);
    Tensor::new(vec![m, n], out)
}
