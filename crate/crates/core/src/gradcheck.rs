//! Central finite-difference checks for the kernels, and an equivalence
//! check of the binning backward pass against its reference evaluation.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Batch;
use crate::error::Result;
use crate::histbin::{self, BinLayout};
use crate::kernels;
use crate::model::{ModelParams, Network};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Differences smaller than this are measured against it instead of the
/// (near zero) gradient magnitude.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, RELATIVE_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub name: String,
    /// Coordinates compared.
    pub checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Compares `backward` with central differences of `forward`.
///
/// The output is reduced to a scalar by an inner product with `upstream`,
/// which is also the gradient handed to `backward`. Every coordinate of
/// every input is perturbed by `±step`.
pub fn grad_check<F, B>(
    name: &str,
    forward: F,
    backward: B,
    inputs: &[Tensor],
    upstream: &Tensor,
    step: f64,
    tol: f64,
) -> Result<GradReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
    B: Fn(&[Tensor], &Tensor) -> Result<Vec<Tensor>>,
{
    let project = |out: &Tensor| -> f64 {
        out.data()
            .iter()
            .zip(upstream.data())
            .map(|(a, b)| a * b)
            .sum()
    };
    let analytic = backward(inputs, upstream)?;
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_rel = 0.0f64;
    let mut checked = 0;
    for (t, grad) in analytic.iter().enumerate() {
        for idx in 0..work[t].len() {
            let orig = work[t].data()[idx];
            work[t].data_mut()[idx] = orig + step;
            let plus = project(&forward(&work)?);
            work[t].data_mut()[idx] = orig - step;
            let minus = project(&forward(&work)?);
            work[t].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            max_rel = max_rel.max(relative_error(grad.data()[idx], numeric));
            checked += 1;
        }
    }
    Ok(GradReport {
        name: name.into(),
        checked,
        max_rel_error: max_rel,
        tolerance: tol,
    })
}

pub type BackwardFn = Box<dyn Fn(&[Tensor], &Tensor) -> Result<Vec<Tensor>>>;

/// One kernel under test: how to run it forward and backward, and how to
/// draw a random input set (with random shapes).
pub struct KernelCase {
    pub name: &'static str,
    pub forward: fn(&[Tensor]) -> Result<Tensor>,
    /// Gradients for every input, given the upstream gradient.
    pub backward: BackwardFn,
    pub inputs: fn(&mut ChaCha8Rng) -> Vec<Tensor>,
}

fn boxed(f: fn(&[Tensor], &Tensor) -> Result<Vec<Tensor>>) -> BackwardFn {
    Box::new(f)
}

impl KernelCase {
    /// The same case with the sign of its backward pass flipped, for
    /// checking that the suite notices a broken kernel.
    pub fn with_sign_fault(self) -> KernelCase {
        let inner = self.backward;
        KernelCase {
            backward: Box::new(move |x: &[Tensor], g: &Tensor| {
                let mut out = inner(x, g)?;
                out.iter_mut().for_each(|t| t.scale(-1.0));
                Ok(out)
            }),
            ..self
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.gen_range(-scale..scale);
    }
    t
}

/// Values bounded away from zero, for kernels with a kink at the origin.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        let mag = rng.gen_range(0.05..1.5);
        *v = if rng.gen::<bool>() { mag } else { -mag };
    }
    t
}

/// Values whose pairwise gaps are at least 0.01, for max pooling.
fn well_separated(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..len).map(|i| i as f64 * 0.01).collect();
    for i in (1..len).rev() {
        let j = rng.gen_range(0..=i);
        vals.swap(i, j);
    }
    Tensor::from_vec(shape, vals).expect("shape matches")
}

fn matmul_case() -> KernelCase {
    KernelCase {
        name: "matmul",
        forward: |x| kernels::matmul(&x[0], &x[1]),
        backward: boxed(|x, g| {
            let (a, b) = kernels::matmul_backward(&x[0], &x[1], g);
            Ok(vec![a, b])
        }),
        inputs: |rng| {
            let (p, q, r) = (
                rng.gen_range(1..6),
                rng.gen_range(1..6),
                rng.gen_range(1..6),
            );
            vec![uniform(rng, &[p, q], 1.0), uniform(rng, &[q, r], 1.0)]
        },
    }
}

fn affine_case() -> KernelCase {
    KernelCase {
        name: "affine",
        forward: |x| kernels::affine(&x[0], &x[1], &x[2]),
        backward: boxed(|x, g| {
            let (a, b, c) = kernels::affine_backward(&x[0], &x[1], g)?;
            Ok(vec![a, b, c])
        }),
        inputs: |rng| {
            let (n, p, q) = (
                rng.gen_range(1..6),
                rng.gen_range(1..6),
                rng.gen_range(1..6),
            );
            vec![
                uniform(rng, &[n, p], 1.0),
                uniform(rng, &[p, q], 1.0),
                uniform(rng, &[q], 1.0),
            ]
        },
    }
}

fn tanh_case() -> KernelCase {
    KernelCase {
        name: "tanh",
        forward: |x| Ok(kernels::tanh(&x[0])),
        backward: boxed(|x, g| Ok(vec![kernels::tanh_backward(&kernels::tanh(&x[0]), g)])),
        inputs: |rng| {
            let (a, b) = (rng.gen_range(1..6), rng.gen_range(1..6));
            vec![uniform(rng, &[a, b], 2.0)]
        },
    }
}

fn relu_case() -> KernelCase {
    KernelCase {
        name: "relu",
        forward: |x| Ok(kernels::relu(&x[0])),
        backward: boxed(|x, g| Ok(vec![kernels::relu_backward(&x[0], g)])),
        inputs: |rng| {
            let (a, b) = (rng.gen_range(1..6), rng.gen_range(1..6));
            vec![away_from_zero(rng, &[a, b])]
        },
    }
}

fn dropout_case() -> KernelCase {
    KernelCase {
        name: "dropout",
        // the mask is an ordinary input so it stays frozen across perturbations
        forward: |x| Ok(kernels::apply_mask(&x[0], &x[1])),
        backward: boxed(|x, g| {
            Ok(vec![
                kernels::apply_mask(g, &x[1]),
                kernels::apply_mask(g, &x[0]),
            ])
        }),
        inputs: |rng| {
            let len = rng.gen_range(1..30);
            let rate = rng.gen_range(0.0..0.9);
            let mask = kernels::dropout_mask(&[len], rate, rng).expect("rate in range");
            vec![uniform(rng, &[len], 1.0), mask]
        },
    }
}

fn conv1d_case() -> KernelCase {
    KernelCase {
        name: "conv1d",
        forward: |x| kernels::conv1d(&x[0], &x[1], &x[2]),
        backward: boxed(|x, g| {
            let (a, b, c) = kernels::conv1d_backward(&x[0], &x[1], g);
            Ok(vec![a, b, c])
        }),
        inputs: |rng| {
            let c_in = rng.gen_range(1..4);
            let len = rng.gen_range(3..26);
            let c_out = rng.gen_range(1..5);
            let f = rng.gen_range(1..=len.min(6));
            let x = if rng.gen::<bool>() {
                uniform(rng, &[c_in, len], 1.0)
            } else {
                let batch = rng.gen_range(1..4);
                uniform(rng, &[batch, c_in, len], 1.0)
            };
            vec![
                x,
                uniform(rng, &[c_out, c_in, f], 1.0),
                uniform(rng, &[c_out], 1.0),
            ]
        },
    }
}

fn maxpool_case() -> KernelCase {
    KernelCase {
        name: "maxpool1d",
        forward: |x| Ok(kernels::maxpool1d(&x[0])?.0),
        backward: boxed(|x, g| {
            let (_, argmax) = kernels::maxpool1d(&x[0])?;
            Ok(vec![kernels::maxpool1d_backward(x[0].shape(), &argmax, g)])
        }),
        inputs: |rng| {
            let (c, len) = (rng.gen_range(1..4), rng.gen_range(2..12));
            if rng.gen::<bool>() {
                vec![well_separated(rng, &[c, len])]
            } else {
                let batch = rng.gen_range(1..4);
                vec![well_separated(rng, &[batch, c, len])]
            }
        },
    }
}

fn flatten_concat_case() -> KernelCase {
    KernelCase {
        name: "flatten_concat",
        forward: |x| {
            let parts: Vec<&Tensor> = x.iter().collect();
            Ok(kernels::flatten_concat(&parts))
        },
        backward: boxed(|x, g| {
            let shapes: Vec<&[usize]> = x.iter().map(|t| t.shape()).collect();
            kernels::flatten_concat_backward(&shapes, g)
        }),
        inputs: |rng| {
            let parts = rng.gen_range(1..4);
            (0..parts)
                .map(|_| {
                    let (a, b) = (rng.gen_range(1..4), rng.gen_range(1..4));
                    uniform(rng, &[a, b], 1.0)
                })
                .collect()
        },
    }
}

fn flatten_rows_case() -> KernelCase {
    KernelCase {
        name: "flatten_rows",
        forward: |x| {
            let parts: Vec<&Tensor> = x.iter().collect();
            kernels::flatten_rows(&parts)
        },
        backward: boxed(|x, g| {
            let shapes: Vec<&[usize]> = x.iter().map(|t| t.shape()).collect();
            kernels::flatten_rows_backward(&shapes, g)
        }),
        inputs: |rng| {
            let batch = rng.gen_range(1..4);
            let parts = rng.gen_range(1..4);
            (0..parts)
                .map(|_| {
                    let (a, b) = (rng.gen_range(1..4), rng.gen_range(1..4));
                    uniform(rng, &[batch, a, b], 1.0)
                })
                .collect()
        },
    }
}

fn softmax_case() -> KernelCase {
    KernelCase {
        name: "softmax_cross_entropy",
        // second input holds the class index; its gradient is zero
        forward: |x| {
            let class = libm::round(x[1].data()[0]) as usize;
            Ok(Tensor::vector(vec![
                kernels::softmax_cross_entropy(&x[0], class)?.0,
            ]))
        },
        backward: boxed(|x, g| {
            let class = libm::round(x[1].data()[0]) as usize;
            let (_, probs) = kernels::softmax_cross_entropy(&x[0], class)?;
            Ok(vec![
                kernels::softmax_cross_entropy_backward(&probs, class, g.data()[0]),
                Tensor::zeros(&[1]),
            ])
        }),
        inputs: |rng| {
            let m = rng.gen_range(2..8);
            let class = rng.gen_range(0..m);
            vec![uniform(rng, &[m], 3.0), Tensor::vector(vec![class as f64])]
        },
    }
}

fn transpose_case() -> KernelCase {
    KernelCase {
        name: "transpose",
        forward: |x| Ok(x[0].transpose()),
        backward: boxed(|_, g| Ok(vec![g.transpose()])),
        inputs: |rng| {
            let (a, b) = (rng.gen_range(1..6), rng.gen_range(1..6));
            vec![uniform(rng, &[a, b], 1.0)]
        },
    }
}

/// Every differentiable kernel the model uses.
pub fn standard_cases() -> Vec<KernelCase> {
    vec![
        matmul_case(),
        affine_case(),
        tanh_case(),
        relu_case(),
        dropout_case(),
        conv1d_case(),
        maxpool_case(),
        flatten_concat_case(),
        flatten_rows_case(),
        softmax_case(),
        transpose_case(),
    ]
}

/// Runs each case on `shapes` random input sets; one report per kernel.
pub fn run_cases(
    cases: &[KernelCase],
    shapes: usize,
    seed: u64,
    step: f64,
    tol: f64,
) -> Result<Vec<GradReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::with_capacity(cases.len());
    for case in cases {
        let mut merged = GradReport {
            name: case.name.into(),
            checked: 0,
            max_rel_error: 0.0,
            tolerance: tol,
        };
        for _ in 0..shapes {
            let inputs = (case.inputs)(&mut rng);
            let out = (case.forward)(&inputs)?;
            let upstream = uniform(&mut rng, out.shape(), 1.0);
            let r = grad_check(
                case.name,
                case.forward,
                &case.backward,
                &inputs,
                &upstream,
                step,
                tol,
            )?;
            merged.checked += r.checked;
            merged.max_rel_error = merged.max_rel_error.max(r.max_rel_error);
        }
        reports.push(merged);
    }
    Ok(reports)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub instances: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Largest elementwise relative difference; exact zeros on both sides count
/// as equal.
pub fn max_relative_difference(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let diff = (x - y).abs();
            if diff == 0.0 {
                0.0
            } else {
                diff / x.abs().max(y.abs())
            }
        })
        .fold(0.0, f64::max)
}

/// Compares [`histbin::histogram_backward`] with the reference evaluation
/// on random inputs with `n <= 50`, `C <= 16` and `k` in `{2, 10, 25}`.
pub fn histbin_oracle_suite(
    instances: usize,
    seed: u64,
    alpha: f64,
    tol: f64,
) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    for _ in 0..instances {
        let k = [2, 10, 25][rng.gen_range(0..3)];
        let n = rng.gen_range(1..=50);
        let c = rng.gen_range(1..=16);
        let layout = BinLayout::new(k)?;
        let values = uniform(&mut rng, &[n, c], 1.0);
        let grad = uniform(&mut rng, &[k, c], 1.0);
        let fast = histbin::histogram_backward(&values, &grad, &layout, alpha)?;
        let slow = histbin::reference::histogram_backward(&values, &grad, layout.centers(), alpha);
        max_rel = max_rel.max(max_relative_difference(&fast, &slow));
    }
    Ok(OracleReport {
        instances,
        max_rel_error: max_rel,
        tolerance: tol,
    })
}

/// Which coordinates of a tensor to perturb: all of them when the tensor
/// has at most `budget` entries, otherwise `budget` distinct indices drawn
/// at random.
pub fn sample_coordinates(len: usize, budget: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= budget {
        return (0..len).collect();
    }
    let mut picked = rand::seq::index::sample(rng, len, budget).into_vec();
    picked.sort_unstable();
    picked
}

/// Gives every bias a random value in `±scale`.
///
/// Freshly initialized biases are zero, and an empty histogram bin then
/// puts convolution outputs exactly on the ReLU kink, where central
/// differences and the (one-sided) analytic gradient legitimately disagree.
pub fn randomize_biases(params: &mut ModelParams, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (name, t) in names.iter().zip(params.tensors_mut()) {
        if name.ends_with(".bias") {
            for v in t.data_mut() {
                *v = rng.gen_range(-scale..scale);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadCheckOptions {
    /// Run in training mode (dropout active, with frozen masks).
    pub train: bool,
    pub dropout_seed: u64,
    /// Coordinates checked per tensor; `usize::MAX` checks all.
    pub budget: usize,
    pub step: f64,
    pub tol: f64,
}

impl Default for HeadCheckOptions {
    fn default() -> Self {
        HeadCheckOptions {
            train: true,
            dropout_seed: 0,
            budget: 256,
            step: DEFAULT_STEP,
            tol: DEFAULT_TOLERANCE,
        }
    }
}

/// Finite-difference check of the classifier-head gradients against the
/// full-model loss on `batch`.
///
/// Every forward pass uses a fresh generator seeded with `dropout_seed`, so
/// dropout masks are identical across perturbations. Node histograms do
/// not depend on head parameters, which is what makes the comparison exact
/// for these tensors. One report per head tensor.
pub fn head_grad_check(
    net: &Network,
    batch: &Batch,
    params: &ModelParams,
    opts: &HeadCheckOptions,
) -> Result<Vec<GradReport>> {
    let HeadCheckOptions {
        train,
        dropout_seed,
        budget,
        step,
        tol,
    } = *opts;
    let loss = |p: &ModelParams| -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        Ok(net.forward(batch, p, train, &mut rng)?.loss)
    };
    let (_, grads) = {
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        net.forward_backward(batch, params, train, &mut rng)?
    };
    let mut coord_rng = ChaCha8Rng::seed_from_u64(dropout_seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut work = params.clone();
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let grad_tensors = grads.tensors();
    let mut reports = Vec::new();
    for (t, name) in names.iter().enumerate() {
        if !name.starts_with("lenet.") {
            continue;
        }
        let coords = sample_coordinates(grad_tensors[t].len(), budget, &mut coord_rng);
        let mut max_rel = 0.0f64;
        for &idx in &coords {
            let orig = work.tensors_mut()[t].data()[idx];
            work.tensors_mut()[t].data_mut()[idx] = orig + step;
            let plus = loss(&work)?;
            work.tensors_mut()[t].data_mut()[idx] = orig - step;
            let minus = loss(&work)?;
            work.tensors_mut()[t].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            max_rel = max_rel.max(relative_error(grad_tensors[t].data()[idx], numeric));
        }
        reports.push(GradReport {
            name: name.clone(),
            checked: coords.len(),
            max_rel_error: max_rel,
            tolerance: tol,
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_suite_passes() {
        let reports = run_cases(&standard_cases(), 5, 17, DEFAULT_STEP, DEFAULT_TOLERANCE).unwrap();
        for r in &reports {
            assert!(r.passed(), "{r:?}");
            assert!(r.checked > 0);
        }
    }

    #[test]
    fn sign_error_in_tanh_backward_is_caught() {
        let broken = tanh_case().with_sign_fault();
        let reports = run_cases(&[broken], 3, 1, DEFAULT_STEP, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(reports[0].name, "tanh");
        assert!(!reports[0].passed());
    }

    #[test]
    fn histbin_matches_reference() {
        let r = histbin_oracle_suite(50, 3, 20.0, 1e-12).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-12, 0.0) - 1e-6).abs() < 1e-18);
    }
}
