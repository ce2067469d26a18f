//! Dense kernels with explicit forward and backward passes.
//!
//! Every backward function takes the upstream gradient of the kernel's output
//! and returns the gradients of its inputs. Conventions that matter for
//! bit-reproducibility:
//!
//! * ReLU has gradient 0 at exactly 0.
//! * Max pooling routes the gradient to the first maximum of each window.
//! * Dropout is inverted: survivors are scaled by `1 / (1 - rate)` so that
//!   evaluation mode is the identity.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::tensor::Tensor;

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(shape_err!(
            op,
            "expected rank {}, got {:?}",
            rank,
            t.shape()
        ));
    }
    Ok(())
}

/// `A B` for `p x q` and `q x r` matrices.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    expect_rank("matmul", a, 2)?;
    expect_rank("matmul", b, 2)?;
    if a.cols() != b.rows() {
        return Err(shape_err!("matmul", "{:?} x {:?}", a.shape(), b.shape()));
    }
    let (p, q, r) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(&[p, r]);
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    for i in 0..p {
        let orow = &mut od[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = ad[i * q + k];
            if aik == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&bd[k * r..(k + 1) * r]) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

/// `A^T B` without materializing the transpose.
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (q, p, r) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(&[p, r]);
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    for k in 0..q {
        let brow = &bd[k * r..(k + 1) * r];
        for i in 0..p {
            let aki = ad[k * p + i];
            if aki == 0.0 {
                continue;
            }
            for (o, bv) in od[i * r..(i + 1) * r].iter_mut().zip(brow) {
                *o += aki * bv;
            }
        }
    }
    out
}

/// `A B^T` without materializing the transpose.
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (p, q, r) = (a.rows(), a.cols(), b.rows());
    let mut out = Tensor::zeros(&[p, r]);
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    for i in 0..p {
        let arow = &ad[i * q..(i + 1) * q];
        for j in 0..r {
            let brow = &bd[j * q..(j + 1) * q];
            od[i * r + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// Returns `(dA, dB) = (G B^T, A^T G)`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad: &Tensor) -> (Tensor, Tensor) {
    (matmul_nt(grad, b), matmul_tn(a, grad))
}

fn as_matrix(op: &'static str, x: &Tensor) -> Result<Tensor> {
    match x.rank() {
        1 => x.clone().reshape(&[1, x.len()]),
        2 => Ok(x.clone()),
        _ => Err(shape_err!(op, "expected rank 1 or 2, got {:?}", x.shape())),
    }
}

/// `X W + b` with `b` broadcast over rows. A rank-1 `X` is treated as a
/// single row and yields a rank-1 result.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let xm = as_matrix("affine", x)?;
    expect_rank("affine", w, 2)?;
    expect_rank("affine", b, 1)?;
    if xm.cols() != w.rows() || b.len() != w.cols() {
        return Err(shape_err!(
            "affine",
            "X {:?}, W {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        ));
    }
    let mut out = matmul(&xm, w)?;
    let q = w.cols();
    for row in out.data_mut().chunks_mut(q) {
        for (o, bv) in row.iter_mut().zip(b.data()) {
            *o += bv;
        }
    }
    if x.rank() == 1 {
        out = out.reshape(&[q])?;
    }
    Ok(out)
}

/// Returns `(dX, dW, db)`; `db` is the column sum of the upstream gradient.
pub fn affine_backward(x: &Tensor, w: &Tensor, grad: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let xm = as_matrix("affine backward", x)?;
    let gm = as_matrix("affine backward", grad)?;
    let (gx, gw) = matmul_backward(&xm, w, &gm);
    let q = w.cols();
    let mut gb = vec![0.0; q];
    for row in gm.data().chunks(q) {
        for (acc, g) in gb.iter_mut().zip(row) {
            *acc += g;
        }
    }
    let gx = if x.rank() == 1 {
        gx.reshape(&[x.len()])?
    } else {
        gx
    };
    Ok((gx, gw, Tensor::vector(gb)))
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(math::tanh)
}

/// Uses the saved output: `G (1 - y^2)`.
pub fn tanh_backward(y: &Tensor, grad: &Tensor) -> Tensor {
    let data = y
        .data()
        .iter()
        .zip(grad.data())
        .map(|(y, g)| g * (1.0 - y * y))
        .collect();
    Tensor::from_vec(y.shape(), data).expect("same shape")
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn relu_backward(x: &Tensor, grad: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(x, g)| if *x > 0.0 { *g } else { 0.0 })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Draws an inverted-dropout mask: each entry is 0 with probability `rate`
/// and `1 / (1 - rate)` otherwise.
pub fn dropout_mask<R: Rng + ?Sized>(shape: &[usize], rate: f64, rng: &mut R) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::DropoutRate(rate));
    }
    let keep = 1.0 / (1.0 - rate);
    let mut mask = Tensor::zeros(shape);
    for m in mask.data_mut() {
        *m = if rng.gen::<f64>() < rate { 0.0 } else { keep };
    }
    Ok(mask)
}

/// Applies dropout. In evaluation mode, or with `rate == 0`, returns the
/// input unchanged and no mask.
pub fn dropout<R: Rng + ?Sized>(
    x: &Tensor,
    rate: f64,
    train: bool,
    rng: &mut R,
) -> Result<(Tensor, Option<Tensor>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::DropoutRate(rate));
    }
    if !train || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let mask = dropout_mask(x.shape(), rate, rng)?;
    Ok((apply_mask(x, &mask), Some(mask)))
}

/// Elementwise product with a saved mask; serves as both forward and backward.
pub fn apply_mask(x: &Tensor, mask: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(mask.data())
        .map(|(a, m)| a * m)
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Splits a conv input into `(batch, channels, len)`; rank 2 is a batch of one.
fn conv_dims(op: &'static str, x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [c, l] => Ok((1, c, l)),
        [b, c, l] => Ok((b, c, l)),
        _ => Err(shape_err!(
            op,
            "expected C x L or B x C x L, got {:?}",
            x.shape()
        )),
    }
}

/// Valid 1-D cross-correlation with stride 1.
///
/// `x` is `C_in x L`, or `B x C_in x L` for a batch of independent signals;
/// `kernel` is `C_out x C_in x f` and `bias` has `C_out` entries. The
/// output is `C_out x (L - f + 1)` (with a leading `B` for batched input).
pub fn conv1d(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, c_in, len) = conv_dims("conv1d", x)?;
    expect_rank("conv1d", kernel, 3)?;
    let (c_out, kc_in, f) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    if kc_in != c_in || bias.len() != c_out {
        return Err(shape_err!(
            "conv1d",
            "x {:?}, kernel {:?}, bias {:?}",
            x.shape(),
            kernel.shape(),
            bias.shape()
        ));
    }
    if f == 0 || f > len {
        return Err(Error::FilterTooLarge { filter: f, len });
    }
    let out_len = len - f + 1;
    let xd = x.data();
    // work position-major so the innermost loop runs over output channels
    let kt = kernel_by_tap(kernel);
    let mut out = vec![0.0; batch * c_out * out_len];
    let mut acc = vec![0.0; c_out];
    for b in 0..batch {
        let xb = &xd[b * c_in * len..(b + 1) * c_in * len];
        let ob = &mut out[b * c_out * out_len..(b + 1) * c_out * out_len];
        for t in 0..out_len {
            acc.copy_from_slice(bias.data());
            for c in 0..c_in {
                for j in 0..f {
                    let xv = xb[c * len + t + j];
                    if xv == 0.0 {
                        continue;
                    }
                    axpy(
                        &mut acc,
                        xv,
                        &kt[(c * f + j) * c_out..(c * f + j + 1) * c_out],
                    );
                }
            }
            for (o, &v) in acc.iter().enumerate() {
                ob[o * out_len + t] = v;
            }
        }
    }
    let shape: &[usize] = if x.rank() == 3 {
        &[batch, c_out, out_len]
    } else {
        &[c_out, out_len]
    };
    Tensor::from_vec(shape, out)
}

/// `dst += a * src`.
fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Rearranges a `C_out x C_in x f` kernel to `(C_in * f) x C_out`.
fn kernel_by_tap(kernel: &Tensor) -> Vec<f64> {
    let (c_out, c_in, f) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    let kd = kernel.data();
    let mut kt = vec![0.0; kd.len()];
    for o in 0..c_out {
        for c in 0..c_in {
            for j in 0..f {
                kt[(c * f + j) * c_out + o] = kd[(o * c_in + c) * f + j];
            }
        }
    }
    kt
}

/// Returns `(dX, dK, db)`.
pub fn conv1d_backward(x: &Tensor, kernel: &Tensor, grad: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (batch, c_in, len) = conv_dims("conv1d backward", x).expect("validated in forward");
    let (c_out, f) = (kernel.shape()[0], kernel.shape()[2]);
    let out_len = len - f + 1;
    let (xd, kd, gd) = (x.data(), kernel.data(), grad.data());

    // kernel as f x C_out x C_in, so dX accumulates over contiguous input channels
    let mut k2 = vec![0.0; kd.len()];
    for o in 0..c_out {
        for c in 0..c_in {
            for j in 0..f {
                k2[(j * c_out + o) * c_in + c] = kd[(o * c_in + c) * f + j];
            }
        }
    }

    let mut gb = vec![0.0; c_out];
    let mut gkt = vec![0.0; c_in * f * c_out];
    let mut gx = vec![0.0; xd.len()];
    let mut gt = vec![0.0; out_len * c_out];
    let mut gxt = vec![0.0; len * c_in];
    for b in 0..batch {
        let xb = &xd[b * c_in * len..(b + 1) * c_in * len];
        let gbatch = &gd[b * c_out * out_len..(b + 1) * c_out * out_len];
        for o in 0..c_out {
            let grow = &gbatch[o * out_len..(o + 1) * out_len];
            gb[o] += grow.iter().sum::<f64>();
            for (t, &g) in grow.iter().enumerate() {
                gt[t * c_out + o] = g;
            }
        }
        gxt.fill(0.0);
        for t in 0..out_len {
            let grow = &gt[t * c_out..(t + 1) * c_out];
            for c in 0..c_in {
                for j in 0..f {
                    let xv = xb[c * len + t + j];
                    if xv == 0.0 {
                        continue;
                    }
                    axpy(
                        &mut gkt[(c * f + j) * c_out..(c * f + j + 1) * c_out],
                        xv,
                        grow,
                    );
                }
            }
            for j in 0..f {
                let dst = &mut gxt[(t + j) * c_in..(t + j + 1) * c_in];
                for (o, &g) in grow.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    axpy(
                        dst,
                        g,
                        &k2[(j * c_out + o) * c_in..(j * c_out + o + 1) * c_in],
                    );
                }
            }
        }
        let gxb = &mut gx[b * c_in * len..(b + 1) * c_in * len];
        for p in 0..len {
            for c in 0..c_in {
                gxb[c * len + p] = gxt[p * c_in + c];
            }
        }
    }
    let mut gk = Tensor::zeros(kernel.shape());
    for o in 0..c_out {
        for c in 0..c_in {
            for j in 0..f {
                gk.data_mut()[(o * c_in + c) * f + j] = gkt[(c * f + j) * c_out + o];
            }
        }
    }
    let gx = Tensor::from_vec(x.shape(), gx).expect("same length as x");
    (gx, gk, Tensor::vector(gb))
}

/// Max pooling with window 2 and stride 2 along the last axis. Leading
/// axes are treated as independent channels. A trailing odd element is
/// dropped. Returns the pooled tensor and the flat source index of each
/// output.
pub fn maxpool1d(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    if x.rank() < 2 {
        return Err(shape_err!(
            "maxpool1d",
            "expected rank 2 or more, got {:?}",
            x.shape()
        ));
    }
    let len = x.shape()[x.rank() - 1];
    let c = x.len() / len.max(1);
    let out_len = len / 2;
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("rank >= 2") = out_len;
    let mut out = Vec::with_capacity(c * out_len);
    let mut argmax = Vec::with_capacity(c * out_len);
    let xd = x.data();
    for ch in 0..c {
        for t in 0..out_len {
            let a = ch * len + 2 * t;
            let (va, vb) = (xd[a], xd[a + 1]);
            // ties go to the first position
            let (idx, v) = if vb > va { (a + 1, vb) } else { (a, va) };
            out.push(v);
            argmax.push(idx);
        }
    }
    Ok((Tensor::from_vec(&shape, out)?, argmax))
}

pub fn maxpool1d_backward(input_shape: &[usize], argmax: &[usize], grad: &Tensor) -> Tensor {
    let mut gx = Tensor::zeros(input_shape);
    for (&idx, g) in argmax.iter().zip(grad.data()) {
        gx.data_mut()[idx] += g;
    }
    gx
}

/// Flattens each part in row-major order and concatenates them.
pub fn flatten_concat(parts: &[&Tensor]) -> Tensor {
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Tensor::vector(data)
}

/// Splits a flat gradient back into tensors of the given shapes.
pub fn flatten_concat_backward(shapes: &[&[usize]], grad: &Tensor) -> Result<Vec<Tensor>> {
    let total: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    if total != grad.len() {
        return Err(shape_err!(
            "flatten_concat backward",
            "{} != {}",
            total,
            grad.len()
        ));
    }
    let mut offset = 0;
    shapes
        .iter()
        .map(|shape| {
            let len: usize = shape.iter().product();
            let part = grad.data()[offset..offset + len].to_vec();
            offset += len;
            Tensor::from_vec(shape, part)
        })
        .collect()
}

/// Flattens each part per leading index and concatenates: parts of shape
/// `B x ...` become one `B x W` matrix, row `b` holding every part's
/// entries for item `b` in order.
pub fn flatten_rows(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or(Error::EmptyInput("flatten_rows"))?;
    let batch = first.shape().first().copied().unwrap_or(0);
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        if p.rank() < 2 || p.shape()[0] != batch {
            return Err(shape_err!(
                "flatten_rows",
                "expected leading axis {}, got {:?}",
                batch,
                p.shape()
            ));
        }
        widths.push(p.len() / batch);
    }
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(batch * total);
    for b in 0..batch {
        for (p, &w) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.data()[b * w..(b + 1) * w]);
        }
    }
    Tensor::from_vec(&[batch, total], data)
}

pub fn flatten_rows_backward(shapes: &[&[usize]], grad: &Tensor) -> Result<Vec<Tensor>> {
    let batch = grad.rows();
    let widths: Vec<usize> = shapes
        .iter()
        .map(|s| s.iter().product::<usize>() / batch.max(1))
        .collect();
    let total: usize = widths.iter().sum();
    if grad.rank() != 2 || total != grad.cols() {
        return Err(shape_err!(
            "flatten_rows backward",
            "{:?} vs {:?}",
            shapes,
            grad.shape()
        ));
    }
    let mut out: Vec<Vec<f64>> = widths
        .iter()
        .map(|w| Vec::with_capacity(w * batch))
        .collect();
    for b in 0..batch {
        let row = grad.row(b);
        let mut offset = 0;
        for (dst, &w) in out.iter_mut().zip(&widths) {
            dst.extend_from_slice(&row[offset..offset + w]);
            offset += w;
        }
    }
    shapes
        .iter()
        .zip(out)
        .map(|(s, d)| Tensor::from_vec(s, d))
        .collect()
}

/// Max-shifted softmax and the negative log-likelihood of `class`.
pub fn softmax_cross_entropy(logits: &Tensor, class: usize) -> Result<(f64, Tensor)> {
    let m = logits.len();
    if class >= m {
        return Err(Error::ClassIndex { class, m });
    }
    let max = logits
        .data()
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.data().iter().map(|&z| math::exp(z - max)).collect();
    let total: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / total).collect();
    // log p_c = (z_c - max) - log(sum)
    let loss = -((logits.data()[class] - max) - math::ln(total));
    Ok((loss, Tensor::vector(probs)))
}

/// `g (p - onehot(class))`.
pub fn softmax_cross_entropy_backward(probs: &Tensor, class: usize, grad: f64) -> Tensor {
    let mut out = probs.clone();
    out.data_mut()[class] -= 1.0;
    out.scale(grad);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matmul_identity() {
        let b = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&Tensor::identity(2), &b).unwrap(), b);
        let g = Tensor::from_rows(&[&[0.5, -1.0], &[2.0, 0.0]]).unwrap();
        let (ga, _) = matmul_backward(&Tensor::identity(2), &b, &g);
        let (_, gb) = matmul_backward(&Tensor::identity(2), &b, &g);
        assert_eq!(gb, g);
        assert_eq!(ga, matmul(&g, &b.transpose()).unwrap());
    }

    #[test]
    fn matmul_scalar_product_rule() {
        let a = Tensor::from_rows(&[&[3.0]]).unwrap();
        let b = Tensor::from_rows(&[&[-2.0]]).unwrap();
        let g = Tensor::from_rows(&[&[0.5]]).unwrap();
        let (ga, gb) = matmul_backward(&a, &b, &g);
        assert_eq!(ga.data(), &[0.5 * -2.0]);
        assert_eq!(gb.data(), &[3.0 * 0.5]);
        assert!(matmul(&a, &Tensor::zeros(&[2, 1])).is_err());
    }

    #[test]
    fn affine_zero_input_yields_bias_rows() {
        let x = Tensor::zeros(&[3, 2]);
        let w = Tensor::filled(&[2, 4], 0.7);
        let b = Tensor::vector(vec![1.0, -1.0, 0.5, 2.0]);
        let y = affine(&x, &w, &b).unwrap();
        for i in 0..3 {
            assert_eq!(y.row(i), b.data());
        }
        let (_, _, gb) = affine_backward(&x, &w, &Tensor::filled(&[3, 4], 1.0)).unwrap();
        assert_eq!(gb.data(), &[3.0; 4]);
    }

    #[test]
    fn affine_vector_input() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let w = Tensor::from_rows(&[&[1.0, 0.0, 1.0], &[0.0, 1.0, 1.0]]).unwrap();
        let y = affine(&x, &w, &Tensor::vector(vec![0.0, 0.0, 1.0])).unwrap();
        assert_eq!(y.shape(), &[3]);
        assert_eq!(y.data(), &[1.0, 2.0, 4.0]);
    }

    #[test]
    fn activation_edge_values() {
        let y = tanh(&Tensor::vector(vec![0.0]));
        assert_eq!(y.data(), &[0.0]);
        assert_eq!(tanh_backward(&y, &Tensor::vector(vec![1.0])).data(), &[1.0]);

        let x = Tensor::vector(vec![-2.0, 0.0, 3.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 3.0]);
        let g = relu_backward(&x, &Tensor::vector(vec![1.0, 1.0, 1.0]));
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn dropout_identities_and_rate_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]);
        assert_eq!(dropout(&x, 0.0, true, &mut rng).unwrap().0, x);
        assert_eq!(dropout(&x, 0.9, false, &mut rng).unwrap().0, x);
        assert_eq!(
            dropout(&x, 1.0, true, &mut rng),
            Err(Error::DropoutRate(1.0))
        );
        assert_eq!(
            dropout(&x, -0.1, false, &mut rng),
            Err(Error::DropoutRate(-0.1))
        );
    }

    #[test]
    fn dropout_keep_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for rate in [0.2, 0.5, 0.8] {
            let mask = dropout_mask(&[1_000_000], rate, &mut rng).unwrap();
            let kept = mask.data().iter().filter(|&&m| m != 0.0).count() as f64 / 1e6;
            assert!(
                (kept - (1.0 - rate)).abs() <= 0.005,
                "rate {rate}: kept {kept}"
            );
            let survivor = mask.data().iter().find(|&&m| m != 0.0).unwrap();
            assert_relative_eq!(*survivor, 1.0 / (1.0 - rate));
        }
    }

    #[test]
    fn conv1d_hand_cases() {
        let x = Tensor::from_rows(&[&[1.0, 2.0, 3.0]]).unwrap();
        let one = Tensor::from_vec(&[1, 1, 1], vec![1.0]).unwrap();
        assert_eq!(conv1d(&x, &one, &Tensor::vector(vec![0.0])).unwrap(), x);

        let pair = Tensor::from_vec(&[1, 1, 2], vec![1.0, 1.0]).unwrap();
        let y = conv1d(&x, &pair, &Tensor::vector(vec![0.0])).unwrap();
        assert_eq!(y.data(), &[3.0, 5.0]);

        let wide = Tensor::from_vec(&[1, 1, 4], vec![1.0; 4]).unwrap();
        assert_eq!(
            conv1d(&x, &wide, &Tensor::vector(vec![0.0])),
            Err(Error::FilterTooLarge { filter: 4, len: 3 })
        );
    }

    #[test]
    fn maxpool_cases() {
        let x = Tensor::from_rows(&[&[1.0, 3.0, 2.0, 2.0]]).unwrap();
        let (y, arg) = maxpool1d(&x).unwrap();
        assert_eq!(y.data(), &[3.0, 2.0]);
        assert_eq!(arg, vec![1, 2]);

        let odd = Tensor::from_rows(&[&[1.0, 2.0, 3.0, 4.0, 9.0]]).unwrap();
        let (y, _) = maxpool1d(&odd).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0]);

        let tie = Tensor::from_rows(&[&[2.0, 2.0]]).unwrap();
        let (_, arg) = maxpool1d(&tie).unwrap();
        let g = maxpool1d_backward(&[1, 2], &arg, &Tensor::vector(vec![1.0]));
        assert_eq!(g.data(), &[1.0, 0.0]);
    }

    #[test]
    fn flatten_concat_shapes() {
        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = Tensor::vector(vec![5.0, 6.0, 7.0]);
        assert_eq!(flatten_concat(&[&a]).data(), a.data());
        let flat = flatten_concat(&[&a, &b]);
        assert_eq!(flat.len(), 7);
        let parts = flatten_concat_backward(&[a.shape(), b.shape()], &flat).unwrap();
        assert_eq!(parts, vec![a, b]);
    }

    #[test]
    fn softmax_cases() {
        let (loss, p) = softmax_cross_entropy(&Tensor::vector(vec![0.0, 0.0]), 0).unwrap();
        assert_relative_eq!(loss, core::f64::consts::LN_2, max_relative = 1e-15);
        let g = softmax_cross_entropy_backward(&p, 0, 1.0);
        assert_eq!(g.data(), &[-0.5, 0.5]);

        let (loss, p) = softmax_cross_entropy(&Tensor::vector(vec![1000.0, 0.0]), 0).unwrap();
        assert!(loss.abs() < 1e-12 && loss >= 0.0);
        assert!(p.is_finite());

        assert_eq!(
            softmax_cross_entropy(&Tensor::vector(vec![0.0, 0.0]), 2),
            Err(Error::ClassIndex { class: 2, m: 2 })
        );
    }
}
