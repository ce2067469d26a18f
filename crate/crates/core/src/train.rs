//! SGD, plateau learning-rate schedule, early stopping, cross-validation
//! and classification metrics.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{self, Batch, GraphDataset};
use crate::error::{Error, Result};
use crate::laplacian::SparseLaplacian;
use crate::model::{init_params, ModelConfig, ModelParams, Network};
use crate::tensor::Tensor;

/// Which quantity early stopping watches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StopMetric {
    /// Evaluation loss, lower is better.
    Loss,
    /// Evaluation F1 of the positive class, higher is better.
    F1,
}

/// Where the model-selection signal comes from during cross-validation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EvalProtocol {
    /// Stop and schedule on the test fold itself.
    TestAsVal,
    /// Carve a validation split out of the training fold.
    HeldOutVal,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub cooldown: usize,
    pub lr_min: f64,
    /// Reduce the learning rate on plateaus; when false it stays at `lr`.
    pub schedule: bool,
    pub batch: usize,
    /// Epochs without improvement before stopping; `None` disables it.
    pub stop_patience: Option<usize>,
    pub max_epochs: usize,
    pub seed: u64,
    pub oversample: bool,
    pub stop_metric: StopMetric,
    pub eval_protocol: EvalProtocol,
    /// Fraction of a training fold held out under [`EvalProtocol::HeldOutVal`].
    pub holdout_fraction: f64,
    pub momentum: f64,
    /// Class treated as positive for precision, recall and F1.
    pub positive_class: usize,
    /// Also score the training set (evaluation mode) after every epoch.
    pub track_train_accuracy: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            factor: 0.5,
            patience: 2,
            cooldown: 0,
            lr_min: 1e-7,
            schedule: true,
            batch: 32,
            stop_patience: Some(9),
            max_epochs: 200,
            seed: 0,
            oversample: false,
            stop_metric: StopMetric::Loss,
            eval_protocol: EvalProtocol::HeldOutVal,
            holdout_fraction: 0.1,
            momentum: 0.0,
            positive_class: 1,
            track_train_accuracy: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return bad(alloc::format!(
                "factor must lie in (0, 1), got {}",
                self.factor
            ));
        }
        if self.lr.is_nan() || self.lr <= 0.0 || self.lr_min > self.lr {
            return bad(alloc::format!(
                "need 0 < lr_min <= lr, got lr {} and lr_min {}",
                self.lr,
                self.lr_min
            ));
        }
        if self.batch == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(alloc::format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return bad(alloc::format!(
                "holdout fraction must lie in (0, 1), got {}",
                self.holdout_fraction
            ));
        }
        Ok(())
    }
}

/// Plain SGD on a gradient that is a sum over `batch_size` graphs:
/// `p -= lr * g / batch_size`.
pub fn sgd_step(params: &mut ModelParams, grads: &ModelParams, lr: f64, batch_size: usize) {
    let scale = 1.0 / batch_size as f64;
    for (p, (_, g)) in params.tensors_mut().into_iter().zip(grads.named_tensors()) {
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * (gv * scale);
        }
    }
}

/// SGD with optional heavy-ball momentum. With zero momentum it is exactly
/// [`sgd_step`].
#[derive(Clone, Debug)]
pub struct Sgd {
    momentum: f64,
    velocity: Option<ModelParams>,
}

impl Sgd {
    pub fn new(momentum: f64) -> Self {
        Sgd {
            momentum,
            velocity: None,
        }
    }

    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &ModelParams,
        lr: f64,
        batch_size: usize,
    ) {
        if self.momentum == 0.0 {
            sgd_step(params, grads, lr, batch_size);
            return;
        }
        let scale = 1.0 / batch_size as f64;
        let velocity = self.velocity.get_or_insert_with(|| {
            let mut v = grads.clone();
            v.tensors_mut().into_iter().for_each(|t| t.scale(0.0));
            v
        });
        for ((p, v), (_, g)) in params
            .tensors_mut()
            .into_iter()
            .zip(velocity.tensors_mut())
            .zip(grads.named_tensors())
        {
            for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vv = self.momentum * *vv + gv * scale;
                *pv -= lr * *vv;
            }
        }
    }
}

/// Reduce-on-plateau schedule for a minimized quantity.
///
/// An epoch improves when its value is strictly below the best so far.
/// Once more than `patience` consecutive epochs fail to improve, the rate
/// is multiplied by `factor` (floored at `lr_min`) and a cooldown of
/// `cooldown` epochs begins, during which bad epochs are not counted.
#[derive(Clone, Debug, PartialEq)]
pub struct SchedulerState {
    pub lr: f64,
    pub best: f64,
    pub bad_epochs: usize,
    pub cooldown_left: usize,
    factor: f64,
    patience: usize,
    cooldown: usize,
    lr_min: f64,
}

/// Reductions smaller than this are skipped.
const LR_EPS: f64 = 1e-8;

impl SchedulerState {
    pub fn new(config: &TrainConfig) -> Self {
        SchedulerState {
            lr: config.lr,
            best: f64::INFINITY,
            bad_epochs: 0,
            cooldown_left: 0,
            factor: config.factor,
            patience: config.patience,
            cooldown: config.cooldown,
            lr_min: config.lr_min,
        }
    }

    /// Feeds one epoch's monitored value; returns the rate for the next epoch.
    pub fn update(&mut self, value: f64) -> f64 {
        if value < self.best {
            self.best = value;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.cooldown_left > 0 {
            self.cooldown_left -= 1;
            self.bad_epochs = 0;
        }
        if self.bad_epochs > self.patience {
            let reduced = (self.lr * self.factor).max(self.lr_min);
            if self.lr - reduced > LR_EPS.min(self.lr_min * 0.5) {
                self.lr = reduced;
            }
            self.cooldown_left = self.cooldown;
            self.bad_epochs = 0;
        }
        self.lr
    }
}

/// Tracks the best epoch of a monitored metric.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    metric: StopMetric,
    patience: Option<usize>,
    best: f64,
    best_epoch: usize,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(metric: StopMetric, patience: Option<usize>) -> Self {
        let best = match metric {
            StopMetric::Loss => f64::INFINITY,
            StopMetric::F1 => f64::NEG_INFINITY,
        };
        EarlyStopping {
            metric,
            patience,
            best,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    /// Records an epoch; returns true when it is the new best.
    pub fn update(&mut self, epoch: usize, value: f64) -> bool {
        let improved = match self.metric {
            StopMetric::Loss => value < self.best,
            StopMetric::F1 => value > self.best,
        };
        if improved {
            self.best = value;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.patience.is_some_and(|p| self.bad_epochs >= p)
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Replays a metric history through [`EarlyStopping`]; returns the epoch
/// (1-based) at which training stops, if it does.
pub fn early_stop(history: &[f64], stop_patience: usize, metric: StopMetric) -> Option<usize> {
    let mut stopper = EarlyStopping::new(metric, Some(stop_patience));
    for (i, &v) in history.iter().enumerate() {
        stopper.update(i + 1, v);
        if stopper.should_stop() {
            return Some(i + 1);
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Multiclass accuracy plus precision, recall and F1 of `positive`.
pub fn compute_metrics(
    predictions: &[usize],
    labels: &[usize],
    m: usize,
    positive: usize,
) -> Metrics {
    let mut confusion = alloc::vec![alloc::vec![0usize; m]; m];
    for (&p, &y) in predictions.iter().zip(labels) {
        confusion[y][p] += 1;
    }
    let total = labels.len();
    let correct: usize = (0..m).map(|c| confusion[c][c]).sum();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (precision, recall) = if positive < m {
        let tp = confusion[positive][positive];
        let predicted: usize = (0..m).map(|y| confusion[y][positive]).sum();
        let actual: usize = confusion[positive].iter().sum();
        (ratio(tp, predicted), ratio(tp, actual))
    } else {
        (0.0, 0.0)
    };
    Metrics {
        accuracy: ratio(correct, total),
        precision,
        recall,
        f1: f1_score(precision, recall),
        confusion,
    }
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var))
}

/// Per-graph Laplacians and features computed once per dataset.
pub struct Prepared {
    laplacians: Vec<SparseLaplacian>,
    features: Vec<Tensor>,
    labels: Vec<usize>,
}

impl Prepared {
    pub fn new(ds: &GraphDataset) -> Result<Self> {
        let laplacians = ds
            .graphs()
            .iter()
            .map(SparseLaplacian::normalized)
            .collect::<Result<Vec<_>>>()?;
        let features = ds
            .graphs()
            .iter()
            .map(|g| g.features_or_default())
            .collect();
        Ok(Prepared {
            laplacians,
            features,
            labels: ds.labels().to_vec(),
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let parts: Vec<_> = indices
            .iter()
            .map(|&i| (&self.laplacians[i], &self.features[i], self.labels[i]))
            .collect();
        Batch::from_parts(&parts)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Mean per-graph loss.
    pub loss: f64,
    pub predictions: Vec<usize>,
    pub probs: Vec<Tensor>,
    pub metrics: Metrics,
}

/// Scores `indices` in evaluation mode, `batch_size` graphs at a time.
pub fn evaluate(
    net: &Network,
    data: &Prepared,
    indices: &[usize],
    params: &ModelParams,
    batch_size: usize,
    positive: usize,
) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(Error::EmptyInput("evaluation set"));
    }
    // dropout never draws in evaluation mode
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut total = 0.0;
    let mut predictions = Vec::with_capacity(indices.len());
    let mut probs = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = data.batch(chunk)?;
        let fwd = net.forward(&batch, params, false, &mut rng)?;
        total += fwd.loss;
        predictions.extend(fwd.predictions());
        probs.extend(fwd.probs);
    }
    let labels: Vec<usize> = indices.iter().map(|&i| data.labels[i]).collect();
    let metrics = compute_metrics(&predictions, &labels, net.config().m, positive);
    Ok(Evaluation {
        loss: total / indices.len() as f64,
        predictions,
        probs,
        metrics,
    })
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    /// Rate used during this epoch.
    pub lr: f64,
    /// Mean per-graph training loss (training mode).
    pub train_loss: f64,
    pub eval_loss: f64,
    pub eval_accuracy: f64,
    pub eval_f1: f64,
    pub train_accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FoldOutcome {
    /// Parameters from the best epoch.
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Evaluation-set metrics of the best epoch.
    pub metrics: Metrics,
    pub eval_loss: f64,
    pub stopped_early: bool,
}

/// Trains one model on `train_idx`, selecting the best epoch on `eval_idx`.
pub fn train_fold(
    ds: &GraphDataset,
    train_idx: &[usize],
    eval_idx: &[usize],
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<FoldOutcome> {
    let data = Prepared::new(ds)?;
    train_prepared(&data, train_idx, eval_idx, model, config)
}

/// [`train_fold`] on an already prepared dataset.
pub fn train_prepared(
    data: &Prepared,
    train_idx: &[usize],
    eval_idx: &[usize],
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<FoldOutcome> {
    config.validate()?;
    if train_idx.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    if eval_idx.is_empty() {
        return Err(Error::EmptyInput("evaluation set"));
    }
    let net = Network::new(model.clone())?;
    let mut params = init_params(model, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let train_set = if config.oversample {
        dataset::oversample(train_idx, data.labels(), config.seed)?
    } else {
        train_idx.to_vec()
    };

    let mut sgd = Sgd::new(config.momentum);
    let mut scheduler = SchedulerState::new(config);
    let mut stopper = EarlyStopping::new(config.stop_metric, config.stop_patience);
    let mut history = Vec::new();
    let mut best: Option<(ModelParams, Metrics, f64)> = None;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let lr = scheduler.lr;
        let mut order = train_set.clone();
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for chunk in order.chunks(config.batch) {
            let batch = data.batch(chunk)?;
            let (fwd, grads) = net.forward_backward(&batch, &params, true, &mut rng)?;
            train_loss += fwd.loss;
            sgd.step(&mut params, &grads, lr, chunk.len());
        }
        if !params.is_finite() {
            return Err(Error::InvalidConfig(alloc::format!(
                "parameters diverged at epoch {epoch}; lower the learning rate"
            )));
        }
        let eval = evaluate(
            &net,
            data,
            eval_idx,
            &params,
            config.batch,
            config.positive_class,
        )?;
        let train_accuracy = if config.track_train_accuracy {
            Some(
                evaluate(
                    &net,
                    data,
                    train_idx,
                    &params,
                    config.batch,
                    config.positive_class,
                )?
                .metrics
                .accuracy,
            )
        } else {
            None
        };
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss: train_loss / order.len() as f64,
            eval_loss: eval.loss,
            eval_accuracy: eval.metrics.accuracy,
            eval_f1: eval.metrics.f1,
            train_accuracy,
        });
        log::debug!(
            "epoch {epoch}: lr {lr:e}, eval loss {:.6}, eval acc {:.4}",
            eval.loss,
            eval.metrics.accuracy
        );

        if config.schedule {
            scheduler.update(eval.loss);
        }
        let monitored = match config.stop_metric {
            StopMetric::Loss => eval.loss,
            StopMetric::F1 => eval.metrics.f1,
        };
        if stopper.update(epoch, monitored) {
            best = Some((params.clone(), eval.metrics, eval.loss));
        }
        if stopper.should_stop() {
            stopped_early = true;
            break;
        }
    }

    let (params, metrics, eval_loss) =
        best.ok_or(Error::InvalidConfig("max_epochs must be at least 1".into()))?;
    Ok(FoldOutcome {
        params,
        history,
        best_epoch: stopper.best_epoch(),
        metrics,
        eval_loss,
        stopped_early,
    })
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    /// Test-fold metrics of the selected model.
    pub metrics: Metrics,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    /// The selected (best-epoch) parameters.
    pub params: ModelParams,
    /// Indices that drove model selection.
    pub validation: Vec<usize>,
    /// Indices the model was fitted on.
    pub fitted: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

/// Stratified `n_folds` cross-validation. Fold `i` trains with seed
/// `config.seed + i`.
pub fn cross_validate(
    ds: &GraphDataset,
    model: &ModelConfig,
    config: &TrainConfig,
    n_folds: usize,
) -> Result<CvReport> {
    let plan = dataset::split_folds(ds.labels(), n_folds, config.seed)?;
    let data = Prepared::new(ds)?;
    let mut folds = Vec::with_capacity(n_folds);
    for (i, fold) in plan.folds.iter().enumerate() {
        let fold_config = TrainConfig {
            seed: config.seed.wrapping_add(i as u64),
            ..config.clone()
        };
        folds.push(run_fold(
            &data,
            i,
            &fold.train,
            &fold.test,
            model,
            &fold_config,
        )?);
    }
    let accs: Vec<f64> = folds.iter().map(|f| f.metrics.accuracy).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&accs);
    Ok(CvReport {
        folds,
        mean_accuracy,
        std_accuracy,
    })
}

/// Trains and scores a single fold under the configured protocol.
pub fn run_fold(
    data: &Prepared,
    fold: usize,
    train_idx: &[usize],
    test_idx: &[usize],
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<FoldResult> {
    match config.eval_protocol {
        EvalProtocol::TestAsVal => {
            let outcome = train_prepared(data, train_idx, test_idx, model, config)?;
            Ok(FoldResult {
                fold,
                metrics: outcome.metrics,
                best_epoch: outcome.best_epoch,
                history: outcome.history,
                params: outcome.params,
                validation: test_idx.to_vec(),
                fitted: train_idx.to_vec(),
            })
        }
        EvalProtocol::HeldOutVal => {
            let (fit, val) = dataset::holdout_split(
                train_idx,
                data.labels(),
                config.holdout_fraction,
                config.seed,
            );
            if val.is_empty() {
                return Err(Error::InvalidDataset(
                    "training fold too small to hold out a validation split".into(),
                ));
            }
            let outcome = train_prepared(data, &fit, &val, model, config)?;
            let net = Network::new(model.clone())?;
            let test = evaluate(
                &net,
                data,
                test_idx,
                &outcome.params,
                config.batch,
                config.positive_class,
            )?;
            Ok(FoldResult {
                fold,
                metrics: test.metrics,
                best_epoch: outcome.best_epoch,
                history: outcome.history,
                params: outcome.params,
                validation: val,
                fitted: fit,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_dataset, SynthKind};
    use alloc::vec;

    #[test]
    fn sgd_basics() {
        let cfg = ModelConfig::new(17, 0, 1, 0.0, 2, 2);
        let mut p = init_params(&cfg, 0).unwrap();
        let before = p.clone();
        sgd_step(&mut p, &ModelParams::zeros(&cfg), 0.1, 4);
        assert_eq!(p, before);

        let mut p = ModelParams::zeros(&cfg);
        let mut g = ModelParams::zeros(&cfg);
        p.out.bias.data_mut()[0] = 1.0;
        g.out.bias.data_mut()[0] = 2.0;
        sgd_step(&mut p, &g, 0.1, 1);
        assert_eq!(p.out.bias.data()[0], 0.8);
    }

    #[test]
    fn two_small_steps_equal_one_large_for_constant_gradient() {
        // loss = c . p is linear, so the gradient does not depend on p
        let cfg = ModelConfig::new(17, 0, 1, 0.0, 2, 2);
        let mut g = ModelParams::zeros(&cfg);
        g.out.bias.data_mut().copy_from_slice(&[0.75, -1.25]);
        let mut a = init_params(&cfg, 5).unwrap();
        let mut b = a.clone();
        sgd_step(&mut a, &g, 0.125, 2);
        sgd_step(&mut a, &g, 0.125, 2);
        sgd_step(&mut b, &g, 0.25, 2);
        assert_eq!(a.out.bias, b.out.bias);
    }

    #[test]
    fn momentum_zero_matches_plain_sgd() {
        let cfg = ModelConfig::new(17, 0, 1, 0.0, 2, 2);
        let g = init_params(&cfg, 1).unwrap();
        let mut a = init_params(&cfg, 2).unwrap();
        let mut b = a.clone();
        Sgd::new(0.0).step(&mut a, &g, 0.01, 3);
        sgd_step(&mut b, &g, 0.01, 3);
        assert_eq!(a, b);
        let mut c = b.clone();
        let mut heavy = Sgd::new(0.9);
        heavy.step(&mut c, &g, 0.01, 3);
        heavy.step(&mut c, &g, 0.01, 3);
        assert_ne!(c, b);
    }

    #[test]
    fn scheduler_keeps_rate_while_improving() {
        let mut s = SchedulerState::new(&TrainConfig::default());
        for v in [1.0, 0.9, 0.8] {
            assert_eq!(s.update(v), 1e-4);
        }
    }

    #[test]
    fn scheduler_halves_after_plateau() {
        let mut s = SchedulerState::new(&TrainConfig::default());
        let lrs: Vec<f64> = [1.0, 1.0, 1.0, 1.0].iter().map(|&v| s.update(v)).collect();
        assert_eq!(lrs, vec![1e-4, 1e-4, 1e-4, 5e-5]);
    }

    #[test]
    fn scheduler_floors_at_minimum() {
        let mut s = SchedulerState::new(&TrainConfig::default());
        let mut seen = vec![s.lr];
        for _ in 0..200 {
            let lr = s.update(1.0);
            if lr != *seen.last().unwrap() {
                seen.push(lr);
            }
        }
        assert_eq!(&seen[..3], &[1e-4, 5e-5, 2.5e-5]);
        assert_eq!(*seen.last().unwrap(), 1e-7);
        assert!(seen.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn scheduler_cooldown_suppresses_counting() {
        let cfg = TrainConfig {
            cooldown: 2,
            patience: 0,
            ..TrainConfig::default()
        };
        let mut s = SchedulerState::new(&cfg);
        let lrs: Vec<f64> = [1.0, 1.0, 1.0, 1.0, 1.0]
            .iter()
            .map(|&v| s.update(v))
            .collect();
        assert_eq!(lrs, vec![1e-4, 5e-5, 5e-5, 5e-5, 2.5e-5]);
    }

    #[test]
    fn early_stopping_rules() {
        let improving: Vec<f64> = (0..50).map(|i| 1.0 / (i + 1) as f64).collect();
        assert_eq!(early_stop(&improving, 9, StopMetric::Loss), None);

        let mut flat = vec![1.0, 0.5];
        flat.extend(vec![0.5; 12]);
        assert_eq!(early_stop(&flat, 9, StopMetric::Loss), Some(2 + 9));

        let rising: Vec<f64> = (0..30).map(|i| i as f64 / 30.0).collect();
        assert_eq!(early_stop(&rising, 9, StopMetric::F1), None);
    }

    #[test]
    fn metric_definitions() {
        assert!((f1_score(0.683, 0.807) - 0.740).abs() < 5e-4);
        assert_eq!(f1_score(0.0, 0.0), 0.0);

        let m = compute_metrics(&[0, 1, 1, 0], &[0, 1, 1, 0], 2, 1);
        assert_eq!(
            (m.accuracy, m.precision, m.recall, m.f1),
            (1.0, 1.0, 1.0, 1.0)
        );

        let none = compute_metrics(&[0, 0], &[1, 0], 2, 1);
        assert_eq!(none.f1, 0.0);
        assert_eq!(none.accuracy, 0.5);
        assert_eq!(none.confusion, vec![vec![1, 0], vec![1, 0]]);

        let mixed = compute_metrics(&[1, 1, 0, 1], &[1, 0, 1, 1], 2, 1);
        assert!((mixed.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((mixed.recall - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[0.7, 0.8, 0.9]);
        assert!((m - 0.8).abs() < 1e-15);
        assert!((s - 0.1).abs() < 1e-15);
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            factor: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            lr_min: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let ds = synth_dataset(SynthKind::StarsVsCycles, 12, (5, 8), 1).unwrap();
        let model = ModelConfig::new(17, 1, 2, 0.2, 2, 2);
        let cfg = TrainConfig {
            max_epochs: 3,
            batch: 4,
            lr: 0.01,
            ..TrainConfig::default()
        };
        let idx: Vec<usize> = (0..8).collect();
        let eval: Vec<usize> = (8..12).collect();
        let a = train_fold(&ds, &idx, &eval, &model, &cfg).unwrap();
        let b = train_fold(&ds, &idx, &eval, &model, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
        assert_eq!(a.history.len(), 3);
    }

    #[test]
    fn best_epoch_params_reproduce_metric() {
        let ds = synth_dataset(SynthKind::StarsVsCycles, 12, (5, 8), 2).unwrap();
        let model = ModelConfig::new(17, 1, 2, 0.5, 2, 2);
        let cfg = TrainConfig {
            max_epochs: 4,
            batch: 4,
            lr: 0.02,
            ..TrainConfig::default()
        };
        let train: Vec<usize> = (0..8).collect();
        let eval: Vec<usize> = (8..12).collect();
        let out = train_fold(&ds, &train, &eval, &model, &cfg).unwrap();
        let data = Prepared::new(&ds).unwrap();
        let net = Network::new(model).unwrap();
        let again = evaluate(&net, &data, &eval, &out.params, 4, 1).unwrap();
        assert_eq!(again.metrics, out.metrics);
        assert_eq!(again.loss, out.eval_loss);
        let best = &out.history[out.best_epoch - 1];
        assert_eq!(best.eval_loss, out.eval_loss);
    }

    #[test]
    fn cross_validation_shape() {
        let ds = synth_dataset(SynthKind::StarsVsCycles, 20, (5, 7), 3).unwrap();
        let model = ModelConfig::new(17, 0, 2, 0.0, 2, 2);
        let cfg = TrainConfig {
            max_epochs: 2,
            batch: 8,
            lr: 0.01,
            ..TrainConfig::default()
        };
        let report = cross_validate(&ds, &model, &cfg, 4).unwrap();
        assert_eq!(report.folds.len(), 4);
        let accs: Vec<f64> = report.folds.iter().map(|f| f.metrics.accuracy).collect();
        assert_eq!((report.mean_accuracy, report.std_accuracy), mean_std(&accs));

        let literal = TrainConfig {
            eval_protocol: EvalProtocol::TestAsVal,
            ..cfg
        };
        assert_eq!(
            cross_validate(&ds, &model, &literal, 4)
                .unwrap()
                .folds
                .len(),
            4
        );
    }
}
