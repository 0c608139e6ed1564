//! Dense row-major tensors and the forward kernels shared by every backend.
//!
//! Tensors are at most two-dimensional. A shape of `[]` is a scalar, `[n]` a
//! vector, and `[rows, cols]` a matrix whose rows are independent samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::Contract(format!(
                "expected a scalar, found shape {:?}",
                self.shape
            )))
        }
    }

    /// `(rows, cols)` view: vectors are a single row.
    pub fn rows_cols(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => (self.shape[0], self.shape[1..].iter().product()),
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::Shape {
            op,
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    Ok(())
}

/// Row-wise matrix-vector product: each row `x_b` of `x` maps to `W x_b`.
///
/// `w` is `[out, in]`, `x` is `[batch, in]` (or `[in]`), result is
/// `[batch, out]` (or `[out]`).
pub fn matvec(w: &Tensor, x: &Tensor) -> Result<Tensor> {
    let shape_err = || Error::Shape {
        op: "matvec",
        left: w.shape.clone(),
        right: x.shape.clone(),
    };
    if w.shape.len() != 2 || x.shape.is_empty() || x.shape.len() > 2 {
        return Err(shape_err());
    }
    let (out, inp) = (w.shape[0], w.shape[1]);
    let (rows, cols) = x.rows_cols();
    if cols != inp {
        return Err(shape_err());
    }
    let mut data = vec![0.0; rows * out];
    for r in 0..rows {
        let xr = &x.data[r * inp..(r + 1) * inp];
        for o in 0..out {
            let wr = &w.data[o * inp..(o + 1) * inp];
            data[r * out + o] = wr.iter().zip(xr).map(|(a, b)| a * b).sum();
        }
    }
    let shape = if x.shape.len() == 1 {
        vec![out]
    } else {
        vec![rows, out]
    };
    Ok(Tensor { shape, data })
}

/// Adds the vector `b` to every row of `x`.
pub fn add_bias(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (rows, cols) = x.rows_cols();
    if b.shape.len() != 1 || b.shape[0] != cols || x.shape.is_empty() {
        return Err(Error::Shape {
            op: "add_bias",
            left: x.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = x.clone();
    for r in 0..rows {
        for (v, bias) in out.data[r * cols..(r + 1) * cols].iter_mut().zip(&b.data) {
            *v += bias;
        }
    }
    Ok(out)
}

fn zip_with(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    same_shape(op, a, b)?;
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    })
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|&x| f(x)).collect(),
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("sub", a, b, |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("mul", a, b, |x, y| x * y)
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    map(a, |x| c * x)
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    map(a, sigmoid_scalar)
}

pub fn tanh(a: &Tensor) -> Tensor {
    map(a, f64::tanh)
}

pub fn relu(a: &Tensor) -> Tensor {
    map(a, |x| if x > 0.0 { x } else { 0.0 })
}

/// Concatenates along the last axis. All parts must share the row count.
pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
    let rows = first.rows_cols().0;
    let matrix = first.shape.len() == 2;
    for p in parts {
        if p.rows_cols().0 != rows || (p.shape.len() == 2) != matrix || p.shape.is_empty() {
            return Err(Error::Shape {
                op: "concat",
                left: first.shape.clone(),
                right: p.shape.clone(),
            });
        }
    }
    let total: usize = parts.iter().map(|p| p.rows_cols().1).sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for p in parts {
            let c = p.rows_cols().1;
            data.extend_from_slice(&p.data[r * c..(r + 1) * c]);
        }
    }
    let shape = if matrix { vec![rows, total] } else { vec![total] };
    Ok(Tensor { shape, data })
}

/// Output length of an unpadded 1-D convolution.
pub fn conv1d_output_len(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || input < kernel {
        None
    } else {
        Some((input - kernel) / stride + 1)
    }
}

/// Single-channel 1-D convolution applied to every row, no padding.
pub fn conv1d(x: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let (rows, n) = x.rows_cols();
    let width = kernel.len();
    if kernel.shape.len() != 1 || bias.len() != 1 || x.shape.is_empty() {
        return Err(Error::Shape {
            op: "conv1d",
            left: x.shape.clone(),
            right: kernel.shape.clone(),
        });
    }
    let out_len = conv1d_output_len(n, width, stride).ok_or_else(|| Error::Shape {
        op: "conv1d",
        left: x.shape.clone(),
        right: kernel.shape.clone(),
    })?;
    let b = bias.data[0];
    let mut data = Vec::with_capacity(rows * out_len);
    for r in 0..rows {
        let row = &x.data[r * n..(r + 1) * n];
        for o in 0..out_len {
            let window = &row[o * stride..o * stride + width];
            let acc: f64 = window.iter().zip(&kernel.data).map(|(a, k)| a * k).sum();
            data.push(acc + b);
        }
    }
    let shape = if x.shape.len() == 1 {
        vec![out_len]
    } else {
        vec![rows, out_len]
    };
    Ok(Tensor { shape, data })
}

/// Selects `table[index[i]]` for every position; the result has `shape`.
pub fn gather(table: &Tensor, index: &[usize], shape: &[usize]) -> Result<Tensor> {
    if table.shape.len() != 1 || index.len() != shape.iter().product::<usize>() {
        return Err(Error::Shape {
            op: "gather",
            left: table.shape.clone(),
            right: shape.to_vec(),
        });
    }
    let mut data = Vec::with_capacity(index.len());
    for &i in index {
        let v = table.data.get(i).ok_or_else(|| {
            Error::Contract(format!("gather index {i} outside table of {}", table.len()))
        })?;
        data.push(*v);
    }
    Ok(Tensor {
        shape: shape.to_vec(),
        data,
    })
}

pub fn sum(a: &Tensor) -> Tensor {
    Tensor::scalar(pairwise_sum(&a.data))
}

pub fn mean(a: &Tensor) -> Result<Tensor> {
    if a.is_empty() {
        return Err(Error::Contract("mean of an empty tensor".into()));
    }
    Ok(Tensor::scalar(pairwise_sum(&a.data) / a.len() as f64))
}

/// Pairwise summation; order-independent to within O(log n) rounding.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 16;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero_is_half() {
        assert_eq!(sigmoid(&Tensor::scalar(0.0)).data()[0], 0.5);
        assert!(sigmoid_scalar(-800.0).is_finite());
        assert!(sigmoid_scalar(800.0) <= 1.0);
    }

    #[test]
    fn conv1d_hand_example() {
        let x = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]);
        let k = Tensor::vector(vec![1.0, 1.0]);
        let b = Tensor::vector(vec![0.0]);
        let y = conv1d(&x, &k, &b, 2).unwrap();
        assert_eq!(y.data(), &[3.0, 7.0]);
        assert_eq!(conv1d_output_len(32, 2, 2), Some(16));
        assert_eq!(conv1d_output_len(5, 3, 2), Some(2));
    }

    #[test]
    fn matvec_rows_are_independent() {
        let w = Tensor::matrix(2, 3, vec![1.0, 0.0, 2.0, 0.0, 1.0, -1.0]).unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = matvec(&w, &x).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert_eq!(y.data(), &[7.0, -1.0, 16.0, -1.0]);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 2]);
        let err = add(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
        assert!(matvec(&a, &b).is_err());
    }

    #[test]
    fn concat_rows() {
        let a = Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap();
        let b = Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = concat(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn gather_selects_and_checks_bounds() {
        let t = Tensor::vector(vec![0.0, 1.0, 0.5]);
        let g = gather(&t, &[2, 1, 0, 2], &[2, 2]).unwrap();
        assert_eq!(g.data(), &[0.5, 1.0, 0.0, 0.5]);
        assert!(gather(&t, &[3], &[1]).is_err());
    }
}
