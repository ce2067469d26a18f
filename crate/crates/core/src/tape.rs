//! A small reverse-mode tape over the kernels in [`crate::kernels`].
//!
//! Operations are appended in evaluation order, so walking the node list
//! backwards visits them in reverse topological order. Each node saves what
//! its backward pass needs (outputs, masks, argmax indices, probabilities).

use alloc::borrow::Cow;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::histbin::{self, BinLayout};
use crate::kernels;
use crate::laplacian::SparseLaplacian;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<'a> {
    Leaf,
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Tanh(Var),
    Relu(Var),
    Dropout(Var, Tensor),
    Conv1d(Var, Var, Var),
    MaxPool(Var, Vec<usize>),
    FlattenConcat(Vec<Var>),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    Stack(Vec<Var>),
    FlattenRows(Vec<Var>),
    Row(Var, usize),
    LaplacianPower(Var, &'a SparseLaplacian, usize),
    Histogram {
        input: Var,
        rows: Range<usize>,
        layout: &'a BinLayout,
        alpha: f64,
        scale: f64,
    },
    SoftmaxXent(Var, usize, Tensor),
    Sum(Vec<Var>),
}

/// One recorded operation: what produced the value and the value itself.
pub struct TapeNode<'a> {
    op: Op<'a>,
    value: Cow<'a, Tensor>,
}

impl TapeNode<'_> {
    /// Short operation name, for diagnostics.
    pub fn name(&self) -> &'static str {
        match self.op {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Affine(..) => "affine",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Dropout(..) => "dropout",
            Op::Conv1d(..) => "conv1d",
            Op::MaxPool(..) => "maxpool1d",
            Op::FlattenConcat(_) => "flatten_concat",
            Op::Transpose(_) => "transpose",
            Op::ConcatCols(_) => "concat_cols",
            Op::Stack(_) => "stack",
            Op::FlattenRows(_) => "flatten_rows",
            Op::Row(..) => "row",
            Op::LaplacianPower(..) => "laplacian_power",
            Op::Histogram { .. } => "histogram",
            Op::SoftmaxXent(..) => "softmax_cross_entropy",
            Op::Sum(_) => "sum",
        }
    }
}

/// Records a forward computation for later differentiation.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<TapeNode<'a>>,
}

/// Gradients of every tape value with respect to one scalar output.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or `None` if `v` did not influence the output.
    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[TapeNode<'a>] {
        &self.nodes
    }

    fn push(&mut self, op: Op<'a>, value: Tensor) -> Var {
        self.nodes.push(TapeNode {
            op,
            value: Cow::Owned(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Records an owned input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Records a borrowed input, typically a model parameter.
    pub fn param(&mut self, value: &'a Tensor) -> Var {
        self.nodes.push(TapeNode {
            op: Op::Leaf,
            value: Cow::Borrowed(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = kernels::affine(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(Op::Affine(x, w, b), out))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = kernels::tanh(self.value(x));
        self.push(Op::Tanh(x), out)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = kernels::relu(self.value(x));
        self.push(Op::Relu(x), out)
    }

    /// Inverted dropout; a no-op (no node recorded) in evaluation mode or at
    /// rate zero.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let (out, mask) = kernels::dropout(self.value(x), rate, train, rng)?;
        Ok(match mask {
            Some(mask) => self.push(Op::Dropout(x, mask), out),
            None => x,
        })
    }

    /// Dropout with a caller-provided mask.
    pub fn dropout_with_mask(&mut self, x: Var, mask: Tensor) -> Result<Var> {
        if mask.shape() != self.value(x).shape() {
            return Err(shape_err!(
                "dropout",
                "mask {:?} vs input {:?}",
                mask.shape(),
                self.value(x).shape()
            ));
        }
        let out = kernels::apply_mask(self.value(x), &mask);
        Ok(self.push(Op::Dropout(x, mask), out))
    }

    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let out = kernels::conv1d(self.value(x), self.value(kernel), self.value(bias))?;
        Ok(self.push(Op::Conv1d(x, kernel, bias), out))
    }

    pub fn maxpool1d(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = kernels::maxpool1d(self.value(x))?;
        Ok(self.push(Op::MaxPool(x, argmax), out))
    }

    pub fn flatten_concat(&mut self, parts: &[Var]) -> Var {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = kernels::flatten_concat(&values);
        self.push(Op::FlattenConcat(parts.to_vec()), out)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.value(x).rank() != 2 {
            return Err(shape_err!(
                "transpose",
                "expected a matrix, got {:?}",
                self.value(x).shape()
            ));
        }
        let out = self.value(x).transpose();
        Ok(self.push(Op::Transpose(x), out))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or(crate::Error::EmptyInput("concat_cols"))?;
        let rows = self.value(*first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 2 || v.rows() != rows {
                return Err(shape_err!(
                    "concat_cols",
                    "expected {} rows, got {:?}",
                    rows,
                    v.shape()
                ));
            }
            widths.push(v.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = Tensor::zeros(&[rows, total]);
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                out.data_mut()[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out))
    }

    /// Stacks equal-shape tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(crate::Error::EmptyInput("stack"))?;
        let inner = self.value(*first).shape().to_vec();
        let mut data = Vec::with_capacity(parts.len() * self.value(*first).len());
        for &p in parts {
            let v = self.value(p);
            if v.shape() != inner.as_slice() {
                return Err(shape_err!(
                    "stack",
                    "expected {:?}, got {:?}",
                    inner,
                    v.shape()
                ));
            }
            data.extend_from_slice(v.data());
        }
        let mut shape = alloc::vec![parts.len()];
        shape.extend_from_slice(&inner);
        let out = Tensor::from_vec(&shape, data)?;
        Ok(self.push(Op::Stack(parts.to_vec()), out))
    }

    /// Per-item flatten and concatenate of tensors sharing a leading axis.
    pub fn flatten_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = kernels::flatten_rows(&values)?;
        Ok(self.push(Op::FlattenRows(parts.to_vec()), out))
    }

    /// Row `i` of a matrix, as a vector.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let v = self.value(x);
        if v.rank() != 2 || i >= v.rows() {
            return Err(shape_err!("row", "row {} of {:?}", i, v.shape()));
        }
        let out = Tensor::vector(v.row(i).to_vec());
        Ok(self.push(Op::Row(x, i), out))
    }

    /// `L^s X`. The backward pass relies on `L` being symmetric.
    pub fn laplacian_power(&mut self, lap: &'a SparseLaplacian, x: Var, s: usize) -> Result<Var> {
        let out = lap.power_apply(self.value(x), s)?;
        Ok(self.push(Op::LaplacianPower(x, lap, s), out))
    }

    /// Histogram of rows `rows` of `input`, multiplied by `scale`, returned
    /// as a `k x C` count matrix.
    pub fn histogram(
        &mut self,
        input: Var,
        rows: Range<usize>,
        layout: &'a BinLayout,
        alpha: f64,
        scale: f64,
    ) -> Result<Var> {
        let block = self.value(input).slice_rows(rows.start, rows.end);
        let mut out = histbin::histogram_forward(&block, layout)?;
        if scale != 1.0 {
            out.scale(scale);
        }
        Ok(self.push(
            Op::Histogram {
                input,
                rows,
                layout,
                alpha,
                scale,
            },
            out,
        ))
    }

    /// Cross-entropy of `logits` against `class`; records probabilities.
    pub fn softmax_cross_entropy(&mut self, logits: Var, class: usize) -> Result<(Var, Tensor)> {
        let (loss, probs) = kernels::softmax_cross_entropy(self.value(logits), class)?;
        let var = self.push(
            Op::SoftmaxXent(logits, class, probs.clone()),
            Tensor::scalar(loss),
        );
        Ok((var, probs))
    }

    /// Sum of scalar values.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let total = parts.iter().map(|&p| self.value(p).sum()).sum();
        self.push(Op::Sum(parts.to_vec()), Tensor::scalar(total))
    }

    /// Reverse pass from a scalar `output` with unit seed gradient.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::filled(self.value(output).shape(), 1.0));

        for idx in (0..=output.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(grad);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (ga, gb) = kernels::matmul_backward(self.value(*a), self.value(*b), &grad);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Affine(x, w, b) => {
                    let (gx, gw, gb) =
                        kernels::affine_backward(self.value(*x), self.value(*w), &grad)?;
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Tanh(x) => {
                    accumulate(&mut grads, *x, kernels::tanh_backward(&node.value, &grad));
                }
                Op::Relu(x) => {
                    accumulate(
                        &mut grads,
                        *x,
                        kernels::relu_backward(self.value(*x), &grad),
                    );
                }
                Op::Dropout(x, mask) => {
                    accumulate(&mut grads, *x, kernels::apply_mask(&grad, mask));
                }
                Op::Conv1d(x, k, b) => {
                    let (gx, gk, gb) =
                        kernels::conv1d_backward(self.value(*x), self.value(*k), &grad);
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *k, gk);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MaxPool(x, argmax) => {
                    let gx = kernels::maxpool1d_backward(self.value(*x).shape(), argmax, &grad);
                    accumulate(&mut grads, *x, gx);
                }
                Op::FlattenConcat(parts) => {
                    let shapes: Vec<&[usize]> =
                        parts.iter().map(|&p| self.value(p).shape()).collect();
                    let pieces = kernels::flatten_concat_backward(&shapes, &grad)?;
                    for (&p, g) in parts.iter().zip(pieces) {
                        accumulate(&mut grads, p, g);
                    }
                }
                Op::Transpose(x) => {
                    accumulate(&mut grads, *x, grad.transpose());
                }
                Op::ConcatCols(parts) => {
                    let rows = grad.rows();
                    let total = grad.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut g = Tensor::zeros(&[rows, w]);
                        for r in 0..rows {
                            g.data_mut()[r * w..(r + 1) * w].copy_from_slice(
                                &grad.data()[r * total + offset..r * total + offset + w],
                            );
                        }
                        offset += w;
                        accumulate(&mut grads, p, g);
                    }
                }
                Op::Stack(parts) => {
                    let width = grad.len() / parts.len();
                    for (r, &p) in parts.iter().enumerate() {
                        let piece = grad.data()[r * width..(r + 1) * width].to_vec();
                        accumulate(
                            &mut grads,
                            p,
                            Tensor::from_vec(self.value(p).shape(), piece)?,
                        );
                    }
                }
                Op::FlattenRows(parts) => {
                    let shapes: Vec<&[usize]> =
                        parts.iter().map(|&p| self.value(p).shape()).collect();
                    let pieces = kernels::flatten_rows_backward(&shapes, &grad)?;
                    for (&p, g) in parts.iter().zip(pieces) {
                        accumulate(&mut grads, p, g);
                    }
                }
                Op::Row(x, i) => {
                    let shape = self.value(*x).shape();
                    let slot = grads[x.0].get_or_insert_with(|| Tensor::zeros(shape));
                    let cols = shape[1];
                    for (d, g) in slot.data_mut()[i * cols..(i + 1) * cols]
                        .iter_mut()
                        .zip(grad.data())
                    {
                        *d += g;
                    }
                }
                Op::LaplacianPower(x, lap, s) => {
                    accumulate(&mut grads, *x, lap.power_apply(&grad, *s)?);
                }
                Op::Histogram {
                    input,
                    rows,
                    layout,
                    alpha,
                    scale,
                } => {
                    let full = self.value(*input);
                    let block = full.slice_rows(rows.start, rows.end);
                    let mut upstream = grad;
                    if *scale != 1.0 {
                        upstream.scale(*scale);
                    }
                    let local = histbin::histogram_backward(&block, &upstream, layout, *alpha)?;
                    let slot = grads[input.0].get_or_insert_with(|| Tensor::zeros(full.shape()));
                    let cols = full.cols();
                    let dst = &mut slot.data_mut()[rows.start * cols..rows.end * cols];
                    for (d, g) in dst.iter_mut().zip(local.data()) {
                        *d += g;
                    }
                }
                Op::SoftmaxXent(logits, class, probs) => {
                    let g = kernels::softmax_cross_entropy_backward(probs, *class, grad.data()[0]);
                    accumulate(&mut grads, *logits, g);
                }
                Op::Sum(parts) => {
                    let g = grad.data()[0];
                    for &p in parts {
                        accumulate(&mut grads, p, Tensor::filled(self.value(p).shape(), g));
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
