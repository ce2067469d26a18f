//! The `graphhist` command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use graphhist_core::dataset::{holdout_split, synth_dataset, GraphDataset, SynthKind};
use graphhist_core::gradcheck::{
    head_grad_check, histbin_oracle_suite, randomize_biases, run_cases, standard_cases, GradReport,
    HeadCheckOptions, DEFAULT_STEP, DEFAULT_TOLERANCE,
};
use graphhist_core::histbin::DEFAULT_ALPHA;
use graphhist_core::model::{init_params, ModelConfig, Network};
use graphhist_core::train::{
    cross_validate, evaluate, run_fold, EvalProtocol, Prepared, StopMetric, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::report::{self, RunConfig, RunManifest, Summary};
use crate::tu;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "GRAPHHIST_OUT";

/// Tolerance of the binning oracle comparison.
pub const ORACLE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Parser)]
#[command(
    name = "graphhist",
    version,
    about = "Histogram-pooling graph classifier"
)]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model on a train/test split of a TU dataset.
    Train(TrainArgs),
    /// Stratified k-fold cross-validation.
    Cv(CvArgs),
    /// Score a dataset with a saved checkpoint.
    Eval(EvalArgs),
    /// Finite-difference checks of every kernel and the binning oracle.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic dataset in TU format.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DatasetArgs {
    /// Directory holding NAME_A.txt, NAME_graph_indicator.txt, NAME_graph_labels.txt.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Dataset NAME; inferred from the *_A.txt file when omitted.
    #[arg(long)]
    pub name: Option<String>,
    /// Append one-hot node labels (NAME_node_labels.txt) to the features.
    #[arg(long)]
    pub node_labels: bool,
}

impl DatasetArgs {
    fn load(&self) -> Result<GraphDataset> {
        let ds = tu::load_tu_dataset(&self.dataset, self.name.as_deref(), self.node_labels)?;
        log::info!(
            "loaded {}: {} graphs, {} classes, {:.1} nodes on average",
            ds.name,
            ds.len(),
            ds.m(),
            ds.mean_nodes()
        );
        Ok(ds)
    }
}

/// Architecture flags. Defaults are the most common per-dataset settings
/// of the reference benchmark runs.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Histogram bins.
    #[arg(long, default_value_t = 25)]
    pub k: usize,
    /// Highest Laplacian power (branches 0..=h).
    #[arg(long, default_value_t = 2)]
    pub h: usize,
    /// Embedding width per branch.
    #[arg(long, default_value_t = 64)]
    pub u: usize,
    /// Dropout rate before the fully connected head layers.
    #[arg(long, default_value_t = 0.8)]
    pub dropout: f64,
    /// Sharpness of the binning backward pass.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Divide histogram counts by node count.
    #[arg(long)]
    pub normalize_hist: bool,
}

impl ModelArgs {
    fn config(&self, ds: &GraphDataset) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            alpha: self.alpha,
            normalize_hist: self.normalize_hist,
            ..ModelConfig::new(
                self.k,
                self.h,
                self.u,
                self.dropout,
                ds.m(),
                ds.feature_width(),
            )
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StopMetricArg {
    Loss,
    F1,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ProtocolArg {
    HeldOutVal,
    TestAsVal,
}

#[derive(Debug, Clone, Args)]
pub struct TrainingArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum epochs.
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Initial learning rate.
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
    /// Plateau reduction factor.
    #[arg(long, default_value_t = 0.5)]
    pub factor: f64,
    /// Plateau epochs tolerated before reducing the rate.
    #[arg(long, default_value_t = 2)]
    pub patience: usize,
    #[arg(long, default_value_t = 0)]
    pub cooldown: usize,
    #[arg(long, default_value_t = 1e-7)]
    pub lr_min: f64,
    /// Keep the learning rate fixed.
    #[arg(long)]
    pub no_schedule: bool,
    /// Epochs without improvement before stopping; 0 disables early stopping.
    #[arg(long, default_value_t = 9)]
    pub stop_patience: usize,
    /// Resample minority classes in the training set to the majority count.
    #[arg(long)]
    pub oversample: bool,
    #[arg(long, value_enum, default_value_t = StopMetricArg::Loss)]
    pub stop_metric: StopMetricArg,
    /// Where early stopping and the scheduler take their signal from.
    #[arg(long, value_enum, default_value_t = ProtocolArg::HeldOutVal)]
    pub eval_protocol: ProtocolArg,
    /// Fraction of the training data held out for validation.
    #[arg(long, default_value_t = 0.1)]
    pub holdout_fraction: f64,
    /// Class counted as positive for precision, recall and F1.
    #[arg(long, default_value_t = 1)]
    pub positive_class: usize,
    /// Score the training set after every epoch.
    #[arg(long)]
    pub track_train_accuracy: bool,
}

impl TrainingArgs {
    fn config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            lr: self.lr,
            factor: self.factor,
            patience: self.patience,
            cooldown: self.cooldown,
            lr_min: self.lr_min,
            schedule: !self.no_schedule,
            batch: self.batch,
            stop_patience: (self.stop_patience > 0).then_some(self.stop_patience),
            max_epochs: self.epochs,
            seed: self.seed,
            oversample: self.oversample,
            stop_metric: match self.stop_metric {
                StopMetricArg::Loss => StopMetric::Loss,
                StopMetricArg::F1 => StopMetric::F1,
            },
            eval_protocol: match self.eval_protocol {
                ProtocolArg::HeldOutVal => EvalProtocol::HeldOutVal,
                ProtocolArg::TestAsVal => EvalProtocol::TestAsVal,
            },
            holdout_fraction: self.holdout_fraction,
            momentum: self.momentum,
            positive_class: self.positive_class,
            track_train_accuracy: self.track_train_accuracy,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Fraction of the dataset kept aside as the test set.
    #[arg(long, default_value_t = 0.1)]
    pub test_fraction: f64,
    /// Run directory.
    #[arg(long, env = OUT_ENV, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Run directory.
    #[arg(long, env = OUT_ENV, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SubsetArg {
    All,
    Train,
    Validation,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DatasetArgs,
    /// split.json from a training run; selects graphs with --subset.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Which part of the split to score (default: test with --split, all otherwise).
    #[arg(long, value_enum)]
    pub subset: Option<SubsetArg>,
    /// Expected bin count; an error if the checkpoint differs.
    #[arg(long)]
    pub k: Option<usize>,
    /// Expected highest Laplacian power.
    #[arg(long)]
    pub h: Option<usize>,
    /// Expected embedding width.
    #[arg(long)]
    pub u: Option<usize>,
    /// Expected dropout rate.
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 1)]
    pub positive_class: usize,
    /// Also write each graph's k x C histogram to histograms.csv.
    #[arg(long)]
    pub dump_histograms: bool,
    /// Output directory.
    #[arg(long, env = OUT_ENV, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random shapes per kernel.
    #[arg(long, default_value_t = 20)]
    pub shapes: usize,
    /// Random instances for the binning oracle.
    #[arg(long, default_value_t = 1000)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_STEP)]
    pub step: f64,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub tol: f64,
    /// Flip the sign of one kernel's backward pass.
    #[arg(long, value_name = "KERNEL")]
    pub inject_fault: Option<String>,
    /// Also check the classifier head against the full-model loss.
    #[arg(long)]
    pub head: bool,
    /// Coordinates sampled per head tensor.
    #[arg(long, default_value_t = 256)]
    pub head_budget: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_parser = parse_kind, default_value = "stars_vs_cycles")]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 40)]
    pub count: usize,
    #[arg(long, default_value_t = 10)]
    pub min_nodes: usize,
    #[arg(long, default_value_t = 30)]
    pub max_nodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset NAME (defaults to the kind).
    #[arg(long)]
    pub name: Option<String>,
}

fn parse_kind(s: &str) -> Result<SynthKind, String> {
    s.parse().map_err(|e: graphhist_core::Error| e.to_string())
}

/// Index sets of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub test: graphhist_core::train::Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub checkpoint: String,
    pub graphs: usize,
    pub loss: f64,
    pub metrics: graphhist_core::train::Metrics,
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging(cli.verbose);
    let raw: Vec<String> = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match run(cli, &raw) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

pub fn run(cli: Cli, args: &[String]) -> Result<ExitCode> {
    match cli.command {
        Command::Train(a) => cmd_train(&a, args),
        Command::Cv(a) => cmd_cv(&a, args),
        Command::Eval(a) => cmd_eval(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn manifest(
    command: &str,
    args: &[String],
    config: &RunConfig,
    ds: &GraphDataset,
    data: &DatasetArgs,
    out: &Path,
) -> RunManifest {
    RunManifest {
        command: command.into(),
        args: args.to_vec(),
        config: config.clone(),
        seed: config.train.seed,
        dataset: format!("{} ({})", data.dataset.display(), ds.name),
        output_dir: out.display().to_string(),
        version: report::VERSION.into(),
    }
}

fn cmd_train(a: &TrainArgs, args: &[String]) -> Result<ExitCode> {
    if !(a.test_fraction > 0.0 && a.test_fraction < 1.0) {
        bail!(
            "--test-fraction must lie in (0, 1), got {}",
            a.test_fraction
        );
    }
    let ds = a.data.load()?;
    let config = RunConfig {
        model: a.model.config(&ds)?,
        train: a.training.config()?,
    };
    create_dir(&a.out)?;
    report::write_json(
        &a.out.join("manifest.json"),
        &manifest("train", args, &config, &ds, &a.data, &a.out),
    )?;

    let all: Vec<usize> = (0..ds.len()).collect();
    let (rest, test) = holdout_split(&all, ds.labels(), a.test_fraction, config.train.seed);
    if test.is_empty() {
        bail!("dataset too small for a test split of {}", a.test_fraction);
    }
    let data = Prepared::new(&ds)?;
    let result = run_fold(&data, 0, &rest, &test, &config.model, &config.train)?;

    checkpoint::save(&a.out.join("checkpoint.txt"), &config.model, &result.params)?;
    write_text(
        &a.out.join("history.csv"),
        &report::history_csv(&result.history),
    )?;
    let metrics = RunMetrics {
        best_epoch: result.best_epoch,
        epochs_run: result.history.len(),
        test: result.metrics.clone(),
    };
    report::write_json(&a.out.join("metrics.json"), &metrics)?;
    let split = Split {
        train: result.fitted.clone(),
        validation: if result.validation == test {
            Vec::new()
        } else {
            result.validation.clone()
        },
        test,
    };
    report::write_json(&a.out.join("split.json"), &split)?;
    println!(
        "test accuracy {:.4}, f1 {:.4} (best epoch {} of {})",
        metrics.test.accuracy, metrics.test.f1, metrics.best_epoch, metrics.epochs_run
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_cv(a: &CvArgs, args: &[String]) -> Result<ExitCode> {
    let ds = a.data.load()?;
    let config = RunConfig {
        model: a.model.config(&ds)?,
        train: a.training.config()?,
    };
    create_dir(&a.out)?;
    report::write_json(
        &a.out.join("manifest.json"),
        &manifest("cv", args, &config, &ds, &a.data, &a.out),
    )?;
    let cv = cross_validate(&ds, &config.model, &config.train, a.folds)?;
    for fold in &cv.folds {
        write_text(
            &a.out.join(format!("fold_{}_history.csv", fold.fold)),
            &report::history_csv(&fold.history),
        )?;
        log::info!("fold {}: accuracy {:.4}", fold.fold, fold.metrics.accuracy);
    }
    let summary = Summary::from_cv(&ds.name, config, &cv);
    report::write_json(&a.out.join("summary.json"), &summary)?;
    println!(
        "accuracy {:.2} ± {:.2} over {} folds",
        100.0 * summary.mean_accuracy,
        100.0 * summary.std_accuracy,
        summary.folds.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn check_expected<T: PartialEq + std::fmt::Display>(
    flag: &str,
    expected: Option<T>,
    found: T,
) -> Result<()> {
    match expected {
        Some(e) if e != found => {
            bail!("checkpoint has {flag} = {found}, but --{flag} {e} was given")
        }
        _ => Ok(()),
    }
}

fn cmd_eval(a: &EvalArgs) -> Result<ExitCode> {
    let ck = checkpoint::load(&a.checkpoint)?;
    let cfg = &ck.config;
    check_expected("k", a.k, cfg.k)?;
    check_expected("h", a.h, cfg.h)?;
    check_expected("u", a.u, cfg.u)?;
    check_expected("dropout", a.dropout, cfg.dropout)?;
    let ds = a.data.load()?;
    if ds.m() != cfg.m {
        bail!(
            "checkpoint expects {} classes, dataset {} has {}",
            cfg.m,
            ds.name,
            ds.m()
        );
    }
    if ds.feature_width() != cfg.f_in {
        bail!(
            "checkpoint expects {} input features, dataset {} has {}",
            cfg.f_in,
            ds.name,
            ds.feature_width()
        );
    }

    let indices: Vec<usize> = match (&a.split, a.subset) {
        (None, None | Some(SubsetArg::All)) => (0..ds.len()).collect(),
        (None, Some(_)) => bail!("--subset needs --split"),
        (Some(path), subset) => {
            let split: Split = report::read_json(path)?;
            match subset.unwrap_or(SubsetArg::Test) {
                SubsetArg::All => (0..ds.len()).collect(),
                SubsetArg::Train => split.train,
                SubsetArg::Validation => split.validation,
                SubsetArg::Test => split.test,
            }
        }
    };
    if let Some(&bad) = indices.iter().find(|&&i| i >= ds.len()) {
        bail!("split index {bad} out of range for {} graphs", ds.len());
    }

    let net = Network::new(cfg.clone())?;
    let data = Prepared::new(&ds)?;
    let eval = evaluate(&net, &data, &indices, &ck.params, a.batch, a.positive_class)?;
    let labels: Vec<usize> = indices.iter().map(|&i| ds.labels()[i]).collect();

    create_dir(&a.out)?;
    let output = EvalOutput {
        checkpoint: a.checkpoint.display().to_string(),
        graphs: indices.len(),
        loss: eval.loss,
        metrics: eval.metrics,
    };
    report::write_json(&a.out.join("metrics.json"), &output)?;
    write_text(
        &a.out.join("probabilities.csv"),
        &report::probabilities_csv(&indices, &labels, &eval.predictions, &eval.probs),
    )?;
    if a.dump_histograms {
        let mut hists = Vec::with_capacity(indices.len());
        for chunk in indices.chunks(a.batch.max(1)) {
            hists.extend(net.histograms(&data.batch(chunk)?, &ck.params)?);
        }
        write_text(
            &a.out.join("histograms.csv"),
            &report::histogram_csv(&indices, &hists),
        )?;
    }
    println!("{}", serde_json::to_string_pretty(&output)?);
    Ok(ExitCode::SUCCESS)
}

fn print_report(r: &GradReport) {
    println!(
        "{:<24} checked {:>7}  max rel err {:.3e}  (tol {:.0e})  {}",
        r.name,
        r.checked,
        r.max_rel_error,
        r.tolerance,
        if r.passed() { "PASS" } else { "FAIL" }
    );
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<ExitCode> {
    let mut cases = standard_cases();
    if let Some(name) = &a.inject_fault {
        let Some(pos) = cases.iter().position(|c| c.name == name) else {
            let known: Vec<&str> = cases.iter().map(|c| c.name).collect();
            bail!(
                "unknown kernel {name:?}; known kernels: {}",
                known.join(", ")
            );
        };
        let case = cases.remove(pos);
        cases.insert(pos, case.with_sign_fault());
    }
    let mut failed: Vec<String> = Vec::new();
    for r in run_cases(&cases, a.shapes, a.seed, a.step, a.tol)? {
        print_report(&r);
        if !r.passed() {
            failed.push(r.name);
        }
    }

    let oracle = histbin_oracle_suite(a.instances, a.seed, DEFAULT_ALPHA, ORACLE_TOLERANCE)?;
    println!(
        "{:<24} checked {:>7}  max rel err {:.3e}  (tol {:.0e})  {}",
        "histogram_backward",
        oracle.instances,
        oracle.max_rel_error,
        oracle.tolerance,
        if oracle.passed() { "PASS" } else { "FAIL" }
    );
    if !oracle.passed() {
        failed.push("histogram_backward".into());
    }

    if a.head {
        let ds = synth_dataset(SynthKind::StarsVsCycles, 6, (5, 9), a.seed)?;
        let cfg = ModelConfig::new(17, 1, 2, 0.3, ds.m(), ds.feature_width());
        let net = Network::new(cfg.clone())?;
        let mut params = init_params(&cfg, a.seed)?;
        randomize_biases(&mut params, a.seed, 0.1);
        let batch = Prepared::new(&ds)?.batch(&[0, 1, 2])?;
        let opts = HeadCheckOptions {
            budget: a.head_budget,
            step: a.step,
            tol: a.tol,
            ..HeadCheckOptions::default()
        };
        for r in head_grad_check(&net, &batch, &params, &opts)? {
            print_report(&r);
            if !r.passed() {
                failed.push(r.name);
            }
        }
    }

    if failed.is_empty() {
        println!("all checks passed");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gradient check failed: {}", failed.join(", "));
        Ok(ExitCode::from(1))
    }
}

fn cmd_synth(a: &SynthArgs) -> Result<ExitCode> {
    let name = a
        .name
        .clone()
        .unwrap_or_else(|| a.kind.as_str().to_string());
    let mut ds = synth_dataset(a.kind, a.count, (a.min_nodes, a.max_nodes), a.seed)?;
    ds.name = name.clone();
    tu::write_tu_dataset(&ds, &a.out, &name)?;
    println!("wrote {} graphs to {}", ds.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}
