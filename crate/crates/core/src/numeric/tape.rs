//! Reverse-mode differentiation over an explicit operation tape.
//!
//! Every primitive appends one node holding its forward value and the ids of
//! its inputs. Nodes are appended in evaluation order, so walking the tape
//! backwards visits each node after all of its consumers.

use super::backend::Backend;
use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatVec(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Concat(Vec<Var>),
    Conv1d {
        x: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
    },
    Gather { table: Var, index: Vec<usize> },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    #[cfg(test)]
    pub(crate) corrupt_sigmoid: bool,
}

/// Adjoints indexed by tape node. Only leaves keep their adjoint.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` was not reached.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Propagates adjoints from the scalar `loss` to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.val(loss);
        if !root.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, found shape {:?}",
                root.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(root.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatVec(w, x) => {
                    let (wv, xv) = (self.val(*w), self.val(*x));
                    let (out, inp) = (wv.shape()[0], wv.shape()[1]);
                    let rows = xv.rows_cols().0;
                    let mut dw = vec![0.0; out * inp];
                    let mut dx = vec![0.0; rows * inp];
                    for r in 0..rows {
                        let xr = &xv.data()[r * inp..(r + 1) * inp];
                        let gr = &g.data()[r * out..(r + 1) * out];
                        let dxr = &mut dx[r * inp..(r + 1) * inp];
                        for (o, &go) in gr.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            let wrow = &wv.data()[o * inp..(o + 1) * inp];
                            let dwrow = &mut dw[o * inp..(o + 1) * inp];
                            for j in 0..inp {
                                dwrow[j] += go * xr[j];
                                dxr[j] += go * wrow[j];
                            }
                        }
                    }
                    accumulate(&mut grads, *w, raw(wv.shape(), dw));
                    accumulate(&mut grads, *x, raw(xv.shape(), dx));
                }
                Op::AddBias(x, b) => {
                    let cols = self.val(*b).len();
                    let mut db = vec![0.0; cols];
                    for row in g.data().chunks(cols) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *b, raw(self.val(*b).shape(), db));
                    accumulate(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, tensor::scale(&g, -1.0));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.val(*a), self.val(*b));
                    let da = zip(&g, bv, |gi, bi| gi * bi);
                    let db = zip(&g, av, |gi, ai| gi * ai);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, tensor::scale(&g, *c)),
                Op::Sigmoid(a) => {
                    #[allow(unused_mut)]
                    let mut d = zip(&g, &node.value, |gi, y| gi * y * (1.0 - y));
                    #[cfg(test)]
                    if self.corrupt_sigmoid {
                        d = zip(&g, &node.value, |gi, y| gi * y);
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Tanh(a) => {
                    let d = zip(&g, &node.value, |gi, y| gi * (1.0 - y * y));
                    accumulate(&mut grads, *a, d);
                }
                Op::Relu(a) => {
                    let d = zip(&g, self.val(*a), |gi, x| if x > 0.0 { gi } else { 0.0 });
                    accumulate(&mut grads, *a, d);
                }
                Op::Concat(parts) => {
                    let rows = node.value.rows_cols().0;
                    let total = node.value.rows_cols().1;
                    let mut offset = 0;
                    for p in parts {
                        let pv = self.val(*p);
                        let c = pv.rows_cols().1;
                        let mut d = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                        }
                        offset += c;
                        accumulate(&mut grads, *p, raw(pv.shape(), d));
                    }
                }
                Op::Conv1d {
                    x,
                    kernel,
                    bias,
                    stride,
                } => {
                    let (xv, kv) = (self.val(*x), self.val(*kernel));
                    let (rows, n) = xv.rows_cols();
                    let out_len = node.value.rows_cols().1;
                    let width = kv.len();
                    let mut dx = vec![0.0; rows * n];
                    let mut dk = vec![0.0; width];
                    let mut db = 0.0;
                    for r in 0..rows {
                        for o in 0..out_len {
                            let go = g.data()[r * out_len + o];
                            db += go;
                            for j in 0..width {
                                let xi = r * n + o * stride + j;
                                dk[j] += go * xv.data()[xi];
                                dx[xi] += go * kv.data()[j];
                            }
                        }
                    }
                    accumulate(&mut grads, *x, raw(xv.shape(), dx));
                    accumulate(&mut grads, *kernel, raw(kv.shape(), dk));
                    accumulate(&mut grads, *bias, raw(self.val(*bias).shape(), vec![db]));
                }
                Op::Gather { table, index } => {
                    let tv = self.val(*table);
                    let mut d = vec![0.0; tv.len()];
                    for (&i, gi) in index.iter().zip(g.data()) {
                        d[i] += gi;
                    }
                    accumulate(&mut grads, *table, raw(tv.shape(), d));
                }
                Op::Sum(a) => {
                    let g0 = g.data()[0];
                    accumulate(&mut grads, *a, Tensor::filled(self.val(*a).shape(), g0));
                }
                Op::Mean(a) => {
                    let av = self.val(*a);
                    let g0 = g.data()[0] / av.len() as f64;
                    accumulate(&mut grads, *a, Tensor::filled(av.shape(), g0));
                }
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn raw(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).expect("adjoint shape matches its primal")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    raw(a.shape(), data)
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

impl Backend for Tape {
    type Value = Var;

    fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        self.val(*v)
    }

    fn matvec(&mut self, w: &Var, x: &Var) -> Result<Var> {
        let y = tensor::matvec(self.val(*w), self.val(*x))?;
        Ok(self.push(y, Op::MatVec(*w, *x)))
    }

    fn add_bias(&mut self, x: &Var, b: &Var) -> Result<Var> {
        let y = tensor::add_bias(self.val(*x), self.val(*b))?;
        Ok(self.push(y, Op::AddBias(*x, *b)))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = tensor::add(self.val(*a), self.val(*b))?;
        Ok(self.push(y, Op::Add(*a, *b)))
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = tensor::sub(self.val(*a), self.val(*b))?;
        Ok(self.push(y, Op::Sub(*a, *b)))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = tensor::mul(self.val(*a), self.val(*b))?;
        Ok(self.push(y, Op::Mul(*a, *b)))
    }

    fn scale(&mut self, a: &Var, c: f64) -> Var {
        let y = tensor::scale(self.val(*a), c);
        self.push(y, Op::Scale(*a, c))
    }

    fn sigmoid(&mut self, a: &Var) -> Var {
        let y = tensor::sigmoid(self.val(*a));
        self.push(y, Op::Sigmoid(*a))
    }

    fn tanh(&mut self, a: &Var) -> Var {
        let y = tensor::tanh(self.val(*a));
        self.push(y, Op::Tanh(*a))
    }

    fn relu(&mut self, a: &Var) -> Var {
        let y = tensor::relu(self.val(*a));
        self.push(y, Op::Relu(*a))
    }

    fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| self.val(*p)).collect();
        let y = tensor::concat(&refs)?;
        Ok(self.push(y, Op::Concat(parts.to_vec())))
    }

    fn conv1d(&mut self, x: &Var, kernel: &Var, bias: &Var, stride: usize) -> Result<Var> {
        let y = tensor::conv1d(self.val(*x), self.val(*kernel), self.val(*bias), stride)?;
        Ok(self.push(
            y,
            Op::Conv1d {
                x: *x,
                kernel: *kernel,
                bias: *bias,
                stride,
            },
        ))
    }

    fn gather(&mut self, table: &Var, index: &[usize], shape: &[usize]) -> Result<Var> {
        let y = tensor::gather(self.val(*table), index, shape)?;
        Ok(self.push(
            y,
            Op::Gather {
                table: *table,
                index: index.to_vec(),
            },
        ))
    }

    fn sum(&mut self, a: &Var) -> Var {
        let y = tensor::sum(self.val(*a));
        self.push(y, Op::Sum(*a))
    }

    fn mean(&mut self, a: &Var) -> Result<Var> {
        let y = tensor::mean(self.val(*a))?;
        Ok(self.push(y, Op::Mean(*a)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::vector(vec![0.3, -1.0, 2.5]));
        let loss = tape.sum(&w);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn mean_squared_offset_gradient() {
        let c = Tensor::vector(vec![1.0, 2.0, -1.0, 0.5]);
        let w0 = vec![0.0, 3.0, 1.0, 0.5];
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::vector(w0.clone()));
        let cv = tape.constant(c.clone());
        let d = tape.sub(&w, &cv).unwrap();
        let sq = tape.mul(&d, &d).unwrap();
        let loss = tape.mean(&sq).unwrap();
        let g = tape.backward(loss).unwrap().get(w);
        for i in 0..4 {
            let expected = 2.0 * (w0[i] - c.data()[i]) / 4.0;
            assert!((g.data()[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn unreached_leaf_has_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let unused = tape.leaf(Tensor::zeros(&[2, 2]));
        let loss = tape.sum(&a);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(unused), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let s = tape.sigmoid(&a);
        assert!(matches!(tape.backward(s), Err(Error::Contract(_))));
    }
}
