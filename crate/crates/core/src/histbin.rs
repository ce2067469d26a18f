//! Multi-channel histogram binning of bounded node embeddings.
//!
//! The forward pass counts, for every embedding dimension (channel), how many
//! nodes fall in each of `k` equal bins over `[-1, 1]`. Counting is piecewise
//! constant, so the backward pass is a surrogate: the gradient of each node
//! coordinate is an average of the bin gradients weighted by
//! `exp(-alpha * |center - value|)` and signed by the direction to each bin
//! center. A bin with positive gradient pulls nearby nodes toward its
//! center; a negative gradient pushes them away.

use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Default sharpness of the backward weighting.
pub const DEFAULT_ALPHA: f64 = 20.0;

/// Inputs may exceed `[-1, 1]` by this much before being rejected.
pub const BOUND_TOLERANCE: f64 = 1e-12;

/// `k` evenly spaced, non-overlapping bins covering `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BinLayout {
    centers: Vec<f64>,
    width: f64,
}

impl BinLayout {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::BinCount(k));
        }
        let width = 2.0 / k as f64;
        let centers = (0..k).map(|i| -1.0 + width * (i as f64 + 0.5)).collect();
        Ok(BinLayout { centers, width })
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.width
    }

    #[inline]
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// Bin of `value`. Bins are half-open `[lo, hi)` except the last, which
    /// also takes `+1`. Values within tolerance outside the range clamp to
    /// the end bins.
    pub fn bin_of(&self, value: f64) -> usize {
        let k = self.k();
        let pos = libm::floor((value + 1.0) / self.width);
        if pos < 0.0 {
            0
        } else if pos >= k as f64 {
            k - 1
        } else {
            pos as usize
        }
    }
}

fn check_bounded(values: &Tensor) -> Result<()> {
    let cols = values.cols();
    for (idx, &v) in values.data().iter().enumerate() {
        if !(-1.0 - BOUND_TOLERANCE..=1.0 + BOUND_TOLERANCE).contains(&v) {
            return Err(Error::UnboundedInput {
                value: v,
                node: idx / cols,
                channel: idx % cols,
            });
        }
    }
    Ok(())
}

/// Counts nodes per bin and channel.
///
/// `values` is `n x C` with entries in `[-1, 1]`; the result is `k x C` and
/// every column sums to `n`.
pub fn histogram_forward(values: &Tensor, layout: &BinLayout) -> Result<Tensor> {
    if values.rank() != 2 {
        return Err(shape_err!(
            "histogram",
            "expected n x C, got {:?}",
            values.shape()
        ));
    }
    check_bounded(values)?;
    let c = values.cols();
    let mut counts = Tensor::zeros(&[layout.k(), c]);
    let out = counts.data_mut();
    for row in values.data().chunks(c) {
        for (j, &v) in row.iter().enumerate() {
            out[layout.bin_of(v) * c + j] += 1.0;
        }
    }
    Ok(counts)
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Surrogate gradient of the node values given the gradient of the counts.
///
/// `values` is `n x C`, `grad` is `k x C`; the result is `n x C`. The
/// `k x n x C` distance tensor is never built: each `(node, channel)` pair
/// streams over the bins.
pub fn histogram_backward(
    values: &Tensor,
    grad: &Tensor,
    layout: &BinLayout,
    alpha: f64,
) -> Result<Tensor> {
    if values.rank() != 2 || grad.rank() != 2 {
        return Err(shape_err!(
            "histogram backward",
            "values {:?}, grad {:?}",
            values.shape(),
            grad.shape()
        ));
    }
    let (n, c, k) = (values.rows(), values.cols(), layout.k());
    if grad.rows() != k || grad.cols() != c {
        return Err(shape_err!(
            "histogram backward",
            "grad should be {}x{}, got {:?}",
            k,
            c,
            grad.shape()
        ));
    }
    let centers = layout.centers();
    let gd = grad.data();
    let mut out = Tensor::zeros(&[n, c]);
    let od = out.data_mut();
    for l in 0..n {
        for j in 0..c {
            let v = values.data()[l * c + j];
            let mut num = 0.0;
            let mut den = 0.0;
            for (i, &center) in centers.iter().enumerate() {
                let d = center - v;
                let w = math::exp(-alpha * d.abs());
                num += w * sign(d) * gd[i * c + j];
                den += w;
            }
            if !den.is_finite() || den <= 0.0 {
                // every weight underflowed: rescale by the nearest bin
                let nearest = centers
                    .iter()
                    .fold(f64::INFINITY, |m, &b| m.min((b - v).abs()));
                num = 0.0;
                den = 0.0;
                for (i, &center) in centers.iter().enumerate() {
                    let d = center - v;
                    let w = math::exp(-alpha * (d.abs() - nearest));
                    num += w * sign(d) * gd[i * c + j];
                    den += w;
                }
            }
            od[l * c + j] = num / den;
        }
    }
    Ok(out)
}

/// Plain triple-loop evaluation of the surrogate gradient, kept independent
/// of [`histogram_backward`] so the two can be checked against each other.
pub mod reference {
    use super::*;

    pub fn histogram_backward(
        values: &Tensor,
        grad: &Tensor,
        centers: &[f64],
        alpha: f64,
    ) -> Tensor {
        let n = values.shape()[0];
        let c = values.shape()[1];
        let k = centers.len();
        let mut out = Tensor::zeros(&[n, c]);
        for l in 0..n {
            for j in 0..c {
                let x = values.at(l, j);
                let mut weights = Vec::with_capacity(k);
                let mut signs = Vec::with_capacity(k);
                for center in centers {
                    let d = center - x;
                    weights.push(libm::exp(-alpha * libm::fabs(d)));
                    signs.push(if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    });
                }
                let mut total = 0.0;
                for w in &weights {
                    total += w;
                }
                let mut acc = 0.0;
                for i in 0..k {
                    acc += weights[i] * signs[i] * grad.at(i, j);
                }
                out.set(l, j, acc / total);
            }
        }
        out
    }
}
