//! The operation set the model is written against.
//!
//! [`Eager`] evaluates values only; [`crate::numeric::Tape`] evaluates the
//! same kernels and records them for reverse-mode differentiation. Both call
//! into [`crate::numeric::tensor`], so forward values agree bit for bit.

use super::tensor::{self, Tensor};
use crate::error::Result;

pub trait Backend {
    type Value: Clone;

    fn constant(&mut self, t: Tensor) -> Self::Value;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor;

    fn matvec(&mut self, w: &Self::Value, x: &Self::Value) -> Result<Self::Value>;
    fn add_bias(&mut self, x: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn scale(&mut self, a: &Self::Value, c: f64) -> Self::Value;
    fn sigmoid(&mut self, a: &Self::Value) -> Self::Value;
    fn tanh(&mut self, a: &Self::Value) -> Self::Value;
    fn relu(&mut self, a: &Self::Value) -> Self::Value;
    fn concat(&mut self, parts: &[Self::Value]) -> Result<Self::Value>;
    fn conv1d(
        &mut self,
        x: &Self::Value,
        kernel: &Self::Value,
        bias: &Self::Value,
        stride: usize,
    ) -> Result<Self::Value>;
    fn gather(&mut self, table: &Self::Value, index: &[usize], shape: &[usize]) -> Result<Self::Value>;
    fn sum(&mut self, a: &Self::Value) -> Self::Value;
    fn mean(&mut self, a: &Self::Value) -> Result<Self::Value>;

    /// `x Wᵀ + b` for a batch of rows.
    fn linear(&mut self, w: &Self::Value, b: &Self::Value, x: &Self::Value) -> Result<Self::Value> {
        let y = self.matvec(w, x)?;
        self.add_bias(&y, b)
    }
}

/// Value-only evaluation with no recording.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Backend for Eager {
    type Value = Tensor;

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }

    fn value<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }

    fn matvec(&mut self, w: &Tensor, x: &Tensor) -> Result<Tensor> {
        tensor::matvec(w, x)
    }

    fn add_bias(&mut self, x: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::add_bias(x, b)
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::add(a, b)
    }

    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::sub(a, b)
    }

    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::mul(a, b)
    }

    fn scale(&mut self, a: &Tensor, c: f64) -> Tensor {
        tensor::scale(a, c)
    }

    fn sigmoid(&mut self, a: &Tensor) -> Tensor {
        tensor::sigmoid(a)
    }

    fn tanh(&mut self, a: &Tensor) -> Tensor {
        tensor::tanh(a)
    }

    fn relu(&mut self, a: &Tensor) -> Tensor {
        tensor::relu(a)
    }

    fn concat(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let refs: Vec<&Tensor> = parts.iter().collect();
        tensor::concat(&refs)
    }

    fn conv1d(&mut self, x: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
        tensor::conv1d(x, kernel, bias, stride)
    }

    fn gather(&mut self, table: &Tensor, index: &[usize], shape: &[usize]) -> Result<Tensor> {
        tensor::gather(table, index, shape)
    }

    fn sum(&mut self, a: &Tensor) -> Tensor {
        tensor::sum(a)
    }

    fn mean(&mut self, a: &Tensor) -> Result<Tensor> {
        tensor::mean(a)
    }
}
