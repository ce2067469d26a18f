//! Symmetric normalized Laplacian in CSR form and its repeated application.

use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::graph::Graph;
use crate::math;
use crate::tensor::Tensor;

/// `D^{-1/2} (D - A) D^{-1/2}` stored as compressed sparse rows.
///
/// Column indices within a row are strictly increasing. The matrix is
/// symmetric bit for bit: entry `(i, j)` is computed from the same operands
/// as entry `(j, i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseLaplacian {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl SparseLaplacian {
    /// Builds the normalized Laplacian of `graph`.
    ///
    /// The graph is expected to carry self-loops so that every degree is
    /// positive; a node with zero degree is rejected.
    pub fn normalized(graph: &Graph) -> Result<Self> {
        let n = graph.n();
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        let degree = graph.degree_vector();
        if let Some(node) = degree.iter().position(|&d| d <= 0.0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "node {node} has non-positive degree; add self-loops first"
            )));
        }

        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(graph.edges().len() + n);
        let mut values = Vec::with_capacity(graph.edges().len() + n);
        row_ptr.push(0);

        let edges = graph.edges();
        let mut e = 0;
        for i in 0..n {
            let mut diag_written = false;
            while e < edges.len() && edges[e].0 == i {
                let (_, j, w) = edges[e];
                if j > i && !diag_written {
                    cols.push(i);
                    values.push(1.0);
                    diag_written = true;
                }
                if j == i {
                    cols.push(i);
                    values.push(1.0 - w / degree[i]);
                    diag_written = true;
                } else {
                    // degree[i] * degree[j] is commutative, so (i, j) and (j, i) agree exactly
                    cols.push(j);
                    values.push(-(w / math::sqrt(degree[i] * degree[j])));
                }
                e += 1;
            }
            if !diag_written {
                cols.push(i);
                values.push(1.0);
            }
            row_ptr.push(cols.len());
        }

        Ok(SparseLaplacian {
            n,
            row_ptr,
            cols,
            values,
        })
    }

    /// Block-diagonal matrix over the disjoint union of `blocks`.
    pub fn block_diagonal<'a>(blocks: impl IntoIterator<Item = &'a SparseLaplacian>) -> Self {
        let mut out = SparseLaplacian {
            n: 0,
            row_ptr: alloc::vec![0],
            cols: Vec::new(),
            values: Vec::new(),
        };
        for block in blocks {
            let offset = out.n;
            let base = out.cols.len();
            out.cols.extend(block.cols.iter().map(|c| c + offset));
            out.values.extend_from_slice(&block.values);
            out.row_ptr
                .extend(block.row_ptr[1..].iter().map(|p| p + base));
            out.n += block.n;
        }
        out
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Entry `(i, j)`, zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[range.clone()].binary_search(&j) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(&[self.n, self.n]);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                out.set(i, j, v);
            }
        }
        out
    }

    /// One sparse-dense product `L X`.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.rows() != self.n {
            return Err(shape_err!(
                "laplacian apply",
                "L is {n}x{n}, X has shape {:?}",
                x.shape(),
                n = self.n
            ));
        }
        let f = x.cols();
        let mut out = Tensor::zeros(&[self.n, f]);
        let src = x.data();
        let dst = out.data_mut();
        for i in 0..self.n {
            let out_row = &mut dst[i * f..(i + 1) * f];
            for (j, v) in self.row(i) {
                let in_row = &src[j * f..(j + 1) * f];
                for (o, x) in out_row.iter_mut().zip(in_row) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    /// `L^s X` as `s` successive sparse products; `s = 0` returns `X`.
    pub fn power_apply(&self, x: &Tensor, s: usize) -> Result<Tensor> {
        if x.rank() != 2 || x.rows() != self.n {
            return Err(shape_err!(
                "laplacian power",
                "L is {n}x{n}, X has shape {:?}",
                x.shape(),
                n = self.n
            ));
        }
        let mut current = x.clone();
        for _ in 0..s {
            current = self.apply(&current)?;
        }
        Ok(current)
    }
}
