use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};

/// Dense row-major array of `f64`, optionally carrying an accumulated gradient.
///
/// Tensors are plain values. They only join a computation when bound to a
/// [`Graph`](super::Graph) as a leaf; gradients computed there are written back
/// with [`Tensor::accumulate_grad`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn check_shape(values: usize, shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        bail!(Construction, "shape must have at least one extent");
    }
    if shape.contains(&0) {
        bail!(Construction, "zero extent in shape {:?}", shape);
    }
    if numel(shape) != values {
        bail!(
            Construction,
            "shape {:?} holds {} values, got {}",
            shape,
            numel(shape),
            values
        );
    }
    Ok(())
}

impl Tensor {
    /// Builds a leaf tensor that does not track gradients.
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        check_shape(data.len(), shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn from_slice(values: &[f64], shape: &[usize]) -> Result<Self> {
        Self::from_vec(values.to_vec(), shape)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = numel(shape);
        assert!(n > 0 && !shape.is_empty(), "zero-sized tensor");
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.set_requires_grad(requires_grad);
        self
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
        if !requires_grad {
            self.grad = None;
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the stored gradient. No-op when gradients are not tracked.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        if !self.requires_grad {
            return;
        }
        assert_eq!(g.len(), self.data.len(), "gradient length mismatch");
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, v)| *b += v),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn scale_grad(&mut self, factor: f64) {
        if let Some(buf) = &mut self.grad {
            buf.iter_mut().for_each(|b| *b *= factor);
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Row `r` of a 2-D tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.shape[self.shape.len() - 1];
        &self.data[r * cols..(r + 1) * cols]
    }
}
