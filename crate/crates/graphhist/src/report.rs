//! Run artifacts: epoch history CSV, JSON summaries, run manifests and
//! per-graph CSV dumps.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use graphhist_core::model::ModelConfig;
use graphhist_core::train::{CvReport, EpochRecord, Metrics, TrainConfig};
use graphhist_core::Tensor;
use serde::{Deserialize, Serialize};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn history_csv(history: &[EpochRecord]) -> String {
    let with_train = history.iter().any(|r| r.train_accuracy.is_some());
    let mut out = String::from("epoch,lr,train_loss,eval_loss,eval_accuracy,eval_f1");
    if with_train {
        out.push_str(",train_accuracy");
    }
    out.push('\n');
    for r in history {
        write!(
            out,
            "{},{:e},{:e},{:e},{:e},{:e}",
            r.epoch, r.lr, r.train_loss, r.eval_loss, r.eval_accuracy, r.eval_f1
        )
        .unwrap();
        if with_train {
            match r.train_accuracy {
                Some(a) => write!(out, ",{a:e}").unwrap(),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Parses [`history_csv`] output back into records.
pub fn parse_history_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    let header = lines.next().context("empty history")?;
    let with_train = header.ends_with(",train_accuracy");
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let num = |j: usize| -> Result<f64> {
                f.get(j)
                    .with_context(|| format!("line {}: missing field {j}", i + 2))?
                    .parse()
                    .with_context(|| format!("line {}: field {j}", i + 2))
            };
            Ok(EpochRecord {
                epoch: f[0]
                    .parse()
                    .with_context(|| format!("line {}: epoch", i + 2))?,
                lr: num(1)?,
                train_loss: num(2)?,
                eval_loss: num(3)?,
                eval_accuracy: num(4)?,
                eval_f1: num(5)?,
                train_accuracy: if with_train && f.get(6).is_some_and(|s| !s.is_empty()) {
                    Some(num(6)?)
                } else {
                    None
                },
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub best_epoch: usize,
}

impl FoldSummary {
    pub fn new(fold: usize, m: &Metrics, best_epoch: usize) -> Self {
        FoldSummary {
            fold,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            best_epoch,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub dataset: String,
    pub config: RunConfig,
    pub folds: Vec<FoldSummary>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

impl Summary {
    pub fn from_cv(dataset: &str, config: RunConfig, report: &CvReport) -> Self {
        Summary {
            dataset: dataset.to_string(),
            config,
            folds: report
                .folds
                .iter()
                .map(|f| FoldSummary::new(f.fold, &f.metrics, f.best_epoch))
                .collect(),
            mean_accuracy: report.mean_accuracy,
            std_accuracy: report.std_accuracy,
        }
    }
}

/// Everything needed to replay a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// The full command line, program name excluded.
    pub args: Vec<String>,
    pub config: RunConfig,
    pub seed: u64,
    pub dataset: String,
    pub output_dir: String,
    pub version: String,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// `graph,label,prediction,p0,p1,...`, one row per scored graph.
pub fn probabilities_csv(
    indices: &[usize],
    labels: &[usize],
    predictions: &[usize],
    probs: &[Tensor],
) -> String {
    let m = probs.first().map_or(0, |p| p.len());
    let mut out = String::from("graph,label,prediction");
    for c in 0..m {
        write!(out, ",p{c}").unwrap();
    }
    out.push('\n');
    for (((&g, &y), &p), pr) in indices.iter().zip(labels).zip(predictions).zip(probs) {
        write!(out, "{g},{y},{p}").unwrap();
        for v in pr.data() {
            write!(out, ",{v:e}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// One block per graph: a `# graph <index>` line, then the `k x C`
/// histogram with one comma-separated row per bin.
pub fn histogram_csv(indices: &[usize], hists: &[Tensor]) -> String {
    let mut out = String::new();
    for (&g, h) in indices.iter().zip(hists) {
        writeln!(out, "# graph {g}").unwrap();
        for r in 0..h.rows() {
            let row: Vec<String> = h.row(r).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", row.join(",")).unwrap();
        }
    }
    out
}
