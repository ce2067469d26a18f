//! The full network: Laplacian-power convolutions, combination layers,
//! histogram binning and the 1-D convolutional classifier head.
//!
//! ```text
//! X ─┬─ tanh(L⁰X W₀ + b₀) ─┐
//!    ├─ tanh(L¹X W₁ + b₁) ─┼─ concat ─ tanh(affine) ─ tanh(affine) ─ per-graph histogram
//!    └─ tanh(LʰX Wₕ + bₕ) ─┘                                              │
//!                                        ┌────────────────────────────────┘
//!                                        ├─ conv(f) ─ relu ─ pool ─ conv(f) ─ relu   f = 3, 4, 5, 6
//!                                        └─ conv(k) ─ relu
//!                                              ─ concat ─ dropout ─ fc 256 ─ relu ─ dropout ─ fc m
//! ```

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Batch;
use crate::error::{shape_err, Error, Result};
use crate::histbin::{BinLayout, DEFAULT_ALPHA};
use crate::laplacian::SparseLaplacian;
use crate::math;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Filter sizes of the four convolutional sub-modules.
pub const FILTER_SIZES: [usize; 4] = [3, 4, 5, 6];
pub const FIRST_CONV_CHANNELS: usize = 64;
pub const SECOND_CONV_CHANNELS: usize = 96;
pub const FULL_CONV_CHANNELS: usize = 96;
pub const HIDDEN_UNITS: usize = 256;

/// Smallest bin count for which every sub-module yields at least one output.
pub const MIN_BINS: usize = min_bins();

const fn sub_module_len(k: usize, f: usize) -> usize {
    if k < f {
        return 0;
    }
    let pooled = (k - f).div_ceil(2);
    if pooled < f {
        0
    } else {
        pooled - f + 1
    }
}

const fn min_bins() -> usize {
    let mut k = 2;
    loop {
        let mut ok = true;
        let mut i = 0;
        while i < FILTER_SIZES.len() {
            if sub_module_len(k, FILTER_SIZES[i]) == 0 {
                ok = false;
            }
            i += 1;
        }
        if ok {
            return k;
        }
        k += 1;
    }
}

/// Length of the flattened classifier features for `k` bins.
pub fn flat_width(k: usize) -> usize {
    FILTER_SIZES
        .iter()
        .map(|&f| SECOND_CONV_CHANNELS * sub_module_len(k, f))
        .sum::<usize>()
        + FULL_CONV_CHANNELS
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    /// Number of histogram bins.
    pub k: usize,
    /// Highest Laplacian power; branches run for `0..=h`.
    pub h: usize,
    /// Embedding width of each branch.
    pub u: usize,
    /// Dropout rate in the classifier head.
    pub dropout: f64,
    /// Number of classes.
    pub m: usize,
    /// Input feature width.
    pub f_in: usize,
    /// Sharpness of the binning backward pass.
    pub alpha: f64,
    /// Divide histogram counts by the graph's node count.
    pub normalize_hist: bool,
}

impl ModelConfig {
    pub fn new(k: usize, h: usize, u: usize, dropout: f64, m: usize, f_in: usize) -> Self {
        ModelConfig {
            k,
            h,
            u,
            dropout,
            m,
            f_in,
            alpha: DEFAULT_ALPHA,
            normalize_hist: false,
        }
    }

    /// Histogram channels, `(h + 1) u`.
    pub fn channels(&self) -> usize {
        (self.h + 1) * self.u
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.k < MIN_BINS {
            return bad(format!(
                "k = {} is too small for the filter pipeline (need k >= {MIN_BINS})",
                self.k
            ));
        }
        if self.u == 0 {
            return bad("u must be positive".into());
        }
        if self.m < 2 {
            return bad(format!("need at least two classes, got {}", self.m));
        }
        if self.f_in == 0 {
            return bad("input feature width must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::DropoutRate(self.dropout));
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return bad(format!(
                "alpha must be positive and finite, got {}",
                self.alpha
            ));
        }
        Ok(())
    }
}

/// Weight and bias of a fully connected layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Kernel (`C_out x C_in x f`) and bias of a 1-D convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub kernel: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubModule {
    pub filter: usize,
    pub first: Conv,
    pub second: Conv,
}

/// Every trainable tensor of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// One branch per Laplacian power `0..=h`.
    pub gcn: Vec<Dense>,
    pub comb1: Dense,
    pub comb2: Dense,
    pub sub_modules: Vec<SubModule>,
    /// Convolution spanning the whole bin axis.
    pub full: Conv,
    pub fc1: Dense,
    pub out: Dense,
}

fn dense_zeros(fan_in: usize, fan_out: usize) -> Dense {
    Dense {
        weight: Tensor::zeros(&[fan_in, fan_out]),
        bias: Tensor::zeros(&[fan_out]),
    }
}

fn conv_zeros(c_out: usize, c_in: usize, f: usize) -> Conv {
    Conv {
        kernel: Tensor::zeros(&[c_out, c_in, f]),
        bias: Tensor::zeros(&[c_out]),
    }
}

impl ModelParams {
    /// All-zero parameters with the shapes implied by `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let c = config.channels();
        ModelParams {
            gcn: (0..=config.h)
                .map(|_| dense_zeros(config.f_in, config.u))
                .collect(),
            comb1: dense_zeros(c, c),
            comb2: dense_zeros(c, c),
            sub_modules: FILTER_SIZES
                .iter()
                .map(|&f| SubModule {
                    filter: f,
                    first: conv_zeros(FIRST_CONV_CHANNELS, c, f),
                    second: conv_zeros(SECOND_CONV_CHANNELS, FIRST_CONV_CHANNELS, f),
                })
                .collect(),
            full: conv_zeros(FULL_CONV_CHANNELS, c, config.k),
            fc1: dense_zeros(flat_width(config.k), HIDDEN_UNITS),
            out: dense_zeros(HIDDEN_UNITS, config.m),
        }
    }

    /// Tensors with stable names, in canonical order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (s, d) in self.gcn.iter().enumerate() {
            out.push((format!("gcn.{s}.weight"), &d.weight));
            out.push((format!("gcn.{s}.bias"), &d.bias));
        }
        for (name, d) in [("comb1", &self.comb1), ("comb2", &self.comb2)] {
            out.push((format!("{name}.weight"), &d.weight));
            out.push((format!("{name}.bias"), &d.bias));
        }
        for sm in &self.sub_modules {
            let f = sm.filter;
            out.push((format!("lenet.conv{f}a.kernel"), &sm.first.kernel));
            out.push((format!("lenet.conv{f}a.bias"), &sm.first.bias));
            out.push((format!("lenet.conv{f}b.kernel"), &sm.second.kernel));
            out.push((format!("lenet.conv{f}b.bias"), &sm.second.bias));
        }
        out.push(("lenet.full.kernel".into(), &self.full.kernel));
        out.push(("lenet.full.bias".into(), &self.full.bias));
        out.push(("lenet.fc1.weight".into(), &self.fc1.weight));
        out.push(("lenet.fc1.bias".into(), &self.fc1.bias));
        out.push(("lenet.out.weight".into(), &self.out.weight));
        out.push(("lenet.out.bias".into(), &self.out.bias));
        out
    }

    /// Mutable tensors in the same order as [`ModelParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for d in &mut self.gcn {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        for d in [&mut self.comb1, &mut self.comb2] {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        for sm in &mut self.sub_modules {
            out.push(&mut sm.first.kernel);
            out.push(&mut sm.first.bias);
            out.push(&mut sm.second.kernel);
            out.push(&mut sm.second.bias);
        }
        for t in [
            &mut self.full.kernel,
            &mut self.full.bias,
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.out.weight,
            &mut self.out.bias,
        ] {
            out.push(t);
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Checks that every tensor has the shape `config` requires.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let expected = ModelParams::zeros(config);
        for ((name, want), (_, got)) in expected.named_tensors().iter().zip(self.named_tensors()) {
            if want.shape() != got.shape() {
                return Err(shape_err!(
                    "model params",
                    "{name}: expected {:?}, got {:?}",
                    want.shape(),
                    got.shape()
                ));
            }
        }
        if expected.named_tensors().len() != self.named_tensors().len() {
            return Err(shape_err!(
                "model params",
                "tensor count differs from configuration"
            ));
        }
        Ok(())
    }
}

/// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights and zero biases,
/// drawn in canonical tensor order from a generator seeded with `seed`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut params = ModelParams::zeros(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (name, t) in names.iter().zip(params.tensors_mut()) {
        if name.ends_with(".bias") {
            continue;
        }
        let fan_in = match t.rank() {
            2 => t.shape()[0],
            3 => t.shape()[1] * t.shape()[2],
            _ => unreachable!("weights are matrices or conv kernels"),
        };
        let bound = 1.0 / math::sqrt(fan_in as f64);
        let dist = Uniform::new(-bound, bound);
        for v in t.data_mut() {
            *v = dist.sample(&mut rng);
        }
    }
    Ok(params)
}

/// `tanh(L^s X W + b)` for a single branch.
pub fn gcn_branch(
    lap: &SparseLaplacian,
    x: &Tensor,
    s: usize,
    w: &Tensor,
    b: &Tensor,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.param(x);
    let (wv, bv) = (tape.param(w), tape.param(b));
    let out = branch(&mut tape, lap, xv, s, wv, bv)?;
    Ok(tape.value(out).clone())
}

fn branch<'a>(
    tape: &mut Tape<'a>,
    lap: &'a SparseLaplacian,
    x: Var,
    s: usize,
    w: Var,
    b: Var,
) -> Result<Var> {
    let propagated = if s == 0 {
        x
    } else {
        tape.laplacian_power(lap, x, s)?
    };
    let z = tape.affine(propagated, w, b)?;
    Ok(tape.tanh(z))
}

struct DenseVars {
    weight: Var,
    bias: Var,
}

struct ConvVars {
    kernel: Var,
    bias: Var,
}

/// Tape handles for every parameter; `all` follows canonical order.
struct ParamVars {
    gcn: Vec<DenseVars>,
    comb1: DenseVars,
    comb2: DenseVars,
    sub_modules: Vec<(ConvVars, ConvVars)>,
    full: ConvVars,
    fc1: DenseVars,
    out: DenseVars,
    all: Vec<Var>,
}

impl ParamVars {
    fn register<'a>(tape: &mut Tape<'a>, params: &'a ModelParams) -> Self {
        let mut all = Vec::new();
        let mut reg = |t: &'a Tensor| {
            let v = tape.param(t);
            all.push(v);
            v
        };
        let gcn = params
            .gcn
            .iter()
            .map(|d| DenseVars {
                weight: reg(&d.weight),
                bias: reg(&d.bias),
            })
            .collect();
        let comb1 = DenseVars {
            weight: reg(&params.comb1.weight),
            bias: reg(&params.comb1.bias),
        };
        let comb2 = DenseVars {
            weight: reg(&params.comb2.weight),
            bias: reg(&params.comb2.bias),
        };
        let sub_modules = params
            .sub_modules
            .iter()
            .map(|sm| {
                let a = ConvVars {
                    kernel: reg(&sm.first.kernel),
                    bias: reg(&sm.first.bias),
                };
                let b = ConvVars {
                    kernel: reg(&sm.second.kernel),
                    bias: reg(&sm.second.bias),
                };
                (a, b)
            })
            .collect();
        let full = ConvVars {
            kernel: reg(&params.full.kernel),
            bias: reg(&params.full.bias),
        };
        let fc1 = DenseVars {
            weight: reg(&params.fc1.weight),
            bias: reg(&params.fc1.bias),
        };
        let out = DenseVars {
            weight: reg(&params.out.weight),
            bias: reg(&params.out.bias),
        };
        ParamVars {
            gcn,
            comb1,
            comb2,
            sub_modules,
            full,
            fc1,
            out,
            all,
        }
    }
}

/// Loss and class probabilities of one forward pass over a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    /// Sum of per-graph cross-entropy losses.
    pub loss: f64,
    /// Per-graph losses, in batch order.
    pub losses: Vec<f64>,
    /// Per-graph class probabilities, in batch order.
    pub probs: Vec<Tensor>,
}

impl Forward {
    pub fn predictions(&self) -> Vec<usize> {
        self.probs.iter().map(argmax).collect()
    }
}

pub fn argmax(t: &Tensor) -> usize {
    let mut best = 0;
    for (i, &v) in t.data().iter().enumerate() {
        if v > t.data()[best] {
            best = i;
        }
    }
    best
}

/// A configured network. Parameters are passed to each call so the same
/// network can evaluate different parameter sets.
#[derive(Clone, Debug)]
pub struct Network {
    config: ModelConfig,
    layout: BinLayout,
}

struct Recorded<'a> {
    tape: Tape<'a>,
    vars: ParamVars,
    loss: Var,
    losses: Vec<f64>,
    probs: Vec<Tensor>,
}

impl Network {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = BinLayout::new(config.k)?;
        Ok(Network { config, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &BinLayout {
        &self.layout
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("batch"));
        }
        if batch.features.cols() != self.config.f_in {
            return Err(shape_err!(
                "forward",
                "features have width {}, model expects {}",
                batch.features.cols(),
                self.config.f_in
            ));
        }
        if let Some(&bad) = batch.labels.iter().find(|&&l| l >= self.config.m) {
            return Err(Error::ClassIndex {
                class: bad,
                m: self.config.m,
            });
        }
        Ok(())
    }

    fn record_embed<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        batch: &'a Batch,
        vars: &ParamVars,
    ) -> Result<Var> {
        let x = tape.param(&batch.features);
        let mut branches = Vec::with_capacity(vars.gcn.len());
        for (s, d) in vars.gcn.iter().enumerate() {
            branches.push(branch(tape, &batch.laplacian, x, s, d.weight, d.bias)?);
        }
        let cat = if branches.len() == 1 {
            branches[0]
        } else {
            tape.concat_cols(&branches)?
        };
        let z1 = tape.affine(cat, vars.comb1.weight, vars.comb1.bias)?;
        let c1 = tape.tanh(z1);
        let z2 = tape.affine(c1, vars.comb2.weight, vars.comb2.bias)?;
        Ok(tape.tanh(z2))
    }

    /// Records the convolutional part of the head on a `B x C x k` (graphs,
    /// channels, bins) input; returns the `B x flat_width` features.
    fn record_features(&self, tape: &mut Tape<'_>, hist_t: Var, vars: &ParamVars) -> Result<Var> {
        let mut parts = Vec::with_capacity(FILTER_SIZES.len() + 1);
        for (first, second) in &vars.sub_modules {
            let a = tape.conv1d(hist_t, first.kernel, first.bias)?;
            let a = tape.relu(a);
            let p = tape.maxpool1d(a)?;
            let b = tape.conv1d(p, second.kernel, second.bias)?;
            parts.push(tape.relu(b));
        }
        let full = tape.conv1d(hist_t, vars.full.kernel, vars.full.bias)?;
        parts.push(tape.relu(full));
        tape.flatten_rows(&parts)
    }

    /// Records the fully connected layers on a `B x flat_width` matrix (one
    /// row per graph); returns `B x m` logits.
    fn record_classifier<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        flat: Var,
        vars: &ParamVars,
        train: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let flat = tape.dropout(flat, self.config.dropout, train, rng)?;
        let hidden = tape.affine(flat, vars.fc1.weight, vars.fc1.bias)?;
        let hidden = tape.relu(hidden);
        let hidden = tape.dropout(hidden, self.config.dropout, train, rng)?;
        tape.affine(hidden, vars.out.weight, vars.out.bias)
    }

    fn record<'a, R: Rng + ?Sized>(
        &'a self,
        batch: &'a Batch,
        params: &'a ModelParams,
        train: bool,
        rng: &mut R,
    ) -> Result<Recorded<'a>> {
        self.check_batch(batch)?;
        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, params);
        let embedded = self.record_embed(&mut tape, batch, &vars)?;
        let mut hists = Vec::with_capacity(batch.len());
        for range in &batch.ranges {
            let scale = if self.config.normalize_hist {
                1.0 / range.len() as f64
            } else {
                1.0
            };
            let hist = tape.histogram(
                embedded,
                range.clone(),
                &self.layout,
                self.config.alpha,
                scale,
            )?;
            hists.push(tape.transpose(hist)?);
        }
        // the head runs once on the whole batch
        let stacked = tape.stack(&hists)?;
        let flat = self.record_features(&mut tape, stacked, &vars)?;
        let logits = self.record_classifier(&mut tape, flat, &vars, train, rng)?;
        let mut loss_vars = Vec::with_capacity(batch.len());
        let mut losses = Vec::with_capacity(batch.len());
        let mut probs = Vec::with_capacity(batch.len());
        for (i, &label) in batch.labels.iter().enumerate() {
            let row = tape.row(logits, i)?;
            let (loss, p) = tape.softmax_cross_entropy(row, label)?;
            losses.push(tape.value(loss).data()[0]);
            loss_vars.push(loss);
            probs.push(p);
        }
        let loss = tape.sum(&loss_vars);
        Ok(Recorded {
            tape,
            vars,
            loss,
            losses,
            probs,
        })
    }

    /// Forward pass without gradients.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        batch: &Batch,
        params: &ModelParams,
        train: bool,
        rng: &mut R,
    ) -> Result<Forward> {
        let rec = self.record(batch, params, train, rng)?;
        Ok(Forward {
            loss: rec.tape.value(rec.loss).data()[0],
            losses: rec.losses,
            probs: rec.probs,
        })
    }

    /// Forward pass plus the gradient of the summed loss for every parameter.
    ///
    /// Gradients above the histogram are exact; below it they follow the
    /// binning layer's surrogate rule.
    pub fn forward_backward<R: Rng + ?Sized>(
        &self,
        batch: &Batch,
        params: &ModelParams,
        train: bool,
        rng: &mut R,
    ) -> Result<(Forward, ModelParams)> {
        let rec = self.record(batch, params, train, rng)?;
        let mut grads = rec.tape.backward(rec.loss)?;
        let mut out = ModelParams::zeros(&self.config);
        for (slot, &v) in out.tensors_mut().into_iter().zip(&rec.vars.all) {
            if let Some(g) = grads.take(v) {
                *slot = g;
            }
        }
        let forward = Forward {
            loss: rec.tape.value(rec.loss).data()[0],
            losses: rec.losses,
            probs: rec.probs,
        };
        Ok((forward, out))
    }

    /// Node embeddings after the combination layers, `N x (h+1)u`.
    pub fn embed(&self, batch: &Batch, params: &ModelParams) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, params);
        let v = self.record_embed(&mut tape, batch, &vars)?;
        Ok(tape.value(v).clone())
    }

    /// Per-graph histograms (`k x C`) that the classifier sees.
    pub fn histograms(&self, batch: &Batch, params: &ModelParams) -> Result<Vec<Tensor>> {
        let embedded = self.embed(batch, params)?;
        batch
            .ranges
            .iter()
            .map(|r| {
                let mut h = crate::histbin::histogram_forward(
                    &embedded.slice_rows(r.start, r.end),
                    &self.layout,
                )?;
                if self.config.normalize_hist {
                    h.scale(1.0 / r.len() as f64);
                }
                Ok(h)
            })
            .collect()
    }

    /// Classifier logits for a single `k x C` histogram.
    pub fn lenet_forward<R: Rng + ?Sized>(
        &self,
        hist: &Tensor,
        params: &ModelParams,
        train: bool,
        rng: &mut R,
    ) -> Result<Tensor> {
        let c = self.config.channels();
        if hist.rank() != 2 || hist.rows() != self.config.k || hist.cols() != c {
            return Err(shape_err!(
                "lenet",
                "expected {}x{}, got {:?}",
                self.config.k,
                c,
                hist.shape()
            ));
        }
        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, params);
        let h = tape.param(hist);
        let ht = tape.transpose(h)?;
        let stacked = tape.stack(&[ht])?;
        let flat = self.record_features(&mut tape, stacked, &vars)?;
        let logits = self.record_classifier(&mut tape, flat, &vars, train, rng)?;
        Ok(Tensor::vector(tape.value(logits).row(0).to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_batch;
    use crate::graph::Graph;
    use alloc::vec;

    fn small_config() -> ModelConfig {
        ModelConfig::new(17, 1, 3, 0.0, 2, 2)
    }

    #[test]
    fn minimum_bin_count() {
        assert_eq!(MIN_BINS, 17);
        assert_eq!(sub_module_len(16, 6), 0);
        assert!(ModelConfig::new(16, 1, 3, 0.0, 2, 2).validate().is_err());
        assert!(small_config().validate().is_ok());
    }

    #[test]
    fn flat_width_for_25_bins() {
        let per_f: Vec<usize> = FILTER_SIZES
            .iter()
            .map(|&f| 96 * sub_module_len(25, f))
            .collect();
        assert_eq!(per_f, vec![864, 768, 576, 480]);
        assert_eq!(flat_width(25), 2784);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let cfg = small_config();
        let a = init_params(&cfg, 11).unwrap();
        let b = init_params(&cfg, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_params(&cfg, 12).unwrap());
        for (name, t) in a.named_tensors() {
            if name.ends_with(".bias") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
        a.check_shapes(&cfg).unwrap();
    }

    #[test]
    fn init_variance() {
        // fc1 of k = 25 has 2784 x 256 > 1e5 entries with fan-in 2784
        let cfg = ModelConfig::new(25, 0, 2, 0.0, 2, 2);
        let p = init_params(&cfg, 3).unwrap();
        let w = p.fc1.weight.data();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (w.len() - 1) as f64;
        let target = 1.0 / (3.0 * 2784.0);
        assert!(
            (var / target - 1.0).abs() < 0.1,
            "var {var}, target {target}"
        );
    }

    #[test]
    fn branch_special_cases() {
        let g = Graph::unweighted(3, [(0, 1), (1, 2)])
            .unwrap()
            .add_self_loops();
        let lap = SparseLaplacian::normalized(&g).unwrap();
        let x = g.default_features();
        let w = Tensor::from_rows(&[&[0.1, -0.2], &[0.3, 0.05]]).unwrap();
        let b = Tensor::vector(vec![0.01, -0.02]);

        let z0 = gcn_branch(&lap, &x, 0, &w, &b).unwrap();
        let direct = crate::kernels::tanh(&crate::kernels::affine(&x, &w, &b).unwrap());
        assert_eq!(z0, direct);

        let zero = gcn_branch(&lap, &x, 2, &Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2])).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));

        let z2 = gcn_branch(&lap, &x, 2, &w, &b).unwrap();
        assert!(z2.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn embedding_width_and_bounds() {
        let g = Graph::unweighted(4, [(0, 1), (1, 2), (2, 3)])
            .unwrap()
            .add_self_loops();
        let batch = make_batch(&[&g], &[0]).unwrap();
        let cfg = ModelConfig::new(17, 2, 64, 0.0, 2, 2);
        let net = Network::new(cfg.clone()).unwrap();
        let params = init_params(&cfg, 0).unwrap();
        let e = net.embed(&batch, &params).unwrap();
        assert_eq!(e.shape(), &[4, 192]);
        assert!(e.data().iter().all(|v| v.abs() < 1.0));

        let h0 = ModelConfig::new(17, 0, 5, 0.0, 2, 2);
        assert_eq!(ModelParams::zeros(&h0).comb1.weight.shape(), &[5, 5]);
    }

    #[test]
    fn zero_output_layer_gives_uniform_probabilities() {
        let cfg = ModelConfig::new(17, 1, 3, 0.5, 3, 2);
        let net = Network::new(cfg.clone()).unwrap();
        let mut params = init_params(&cfg, 4).unwrap();
        params.out.weight = Tensor::zeros(params.out.weight.shape());
        let g = Graph::unweighted(3, [(0, 1)]).unwrap().add_self_loops();
        let batch = make_batch(&[&g, &g], &[0, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fwd = net.forward(&batch, &params, true, &mut rng).unwrap();
        assert!((fwd.loss - 2.0 * libm::log(3.0)).abs() < 1e-12);
        for p in &fwd.probs {
            assert!(p.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        }
    }

    #[test]
    fn eval_mode_is_repeatable() {
        let cfg = ModelConfig::new(17, 1, 3, 0.8, 2, 2);
        let net = Network::new(cfg.clone()).unwrap();
        let params = init_params(&cfg, 1).unwrap();
        let g = Graph::unweighted(5, [(0, 1), (0, 2), (0, 3), (0, 4)])
            .unwrap()
            .add_self_loops();
        let batch = make_batch(&[&g], &[1]).unwrap();
        let h = &net.histograms(&batch, &params).unwrap()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = net.lenet_forward(h, &params, false, &mut rng).unwrap();
        let b = net.lenet_forward(h, &params, false, &mut rng).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        for col in 0..cfg.channels() {
            let total: f64 = (0..cfg.k).map(|i| h.at(i, col)).sum();
            assert_eq!(total, 5.0);
        }
    }

    #[test]
    fn wrong_feature_width_rejected() {
        let cfg = ModelConfig::new(17, 1, 3, 0.0, 2, 3);
        let net = Network::new(cfg.clone()).unwrap();
        let params = init_params(&cfg, 1).unwrap();
        let g = Graph::new(2, []).unwrap().add_self_loops();
        let batch = make_batch(&[&g], &[0]).unwrap();
        assert!(net.embed(&batch, &params).is_err());
    }
}
