//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criterion 6 needs the IMDB-BINARY TU files and several CPU hours; it
//! runs when `GRAPHHIST_IMDB_DIR` is set or `--include-ignored` is passed
//! (and then fails if the data is missing). Numeric arguments select
//! criteria: `cargo test --test acceptance -- 1 4`.

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use graphhist::tu::load_tu_dataset;
use graphhist_core::dataset::{make_batch, split_folds, synth_dataset, GraphDataset, SynthKind};
use graphhist_core::gradcheck::{
    head_grad_check, randomize_biases, run_cases, standard_cases, HeadCheckOptions,
};
use graphhist_core::histbin::{histogram_backward, histogram_forward, BinLayout};
use graphhist_core::model::{init_params, ModelConfig, Network};
use graphhist_core::train::{
    compute_metrics, run_fold, train_fold, FoldOutcome, Prepared, TrainConfig,
};
use graphhist_core::{Graph, SparseLaplacian, Tensor};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed < limit
}

/// Surrogate histogram gradient straight from its definition: for node
/// value x in channel j, sum_i e^{-a|c_i - x|} sign(c_i - x) g_ij over
/// sum_i e^{-a|c_i - x|}. Also returns sum_i e^{-a|c_i - x|} |g_ij| over the
/// same denominator, the scale against which cancellation error is measured.
fn oracle_histogram_backward(
    values: &[Vec<f64>],
    grad: &[Vec<f64>],
    centers: &[f64],
    alpha: f64,
    exp: fn(f64) -> f64,
) -> Vec<Vec<(f64, f64)>> {
    values
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, &x)| {
                    let mut num = 0.0;
                    let mut mag = 0.0;
                    let mut den = 0.0;
                    for (i, &c) in centers.iter().enumerate() {
                        let w = exp(-alpha * (c - x).abs());
                        let s = if c > x {
                            1.0
                        } else if c < x {
                            -1.0
                        } else {
                            0.0
                        };
                        num += w * s * grad[i][j];
                        mag += w * grad[i][j].abs();
                        den += w;
                    }
                    (num / den, mag / den)
                })
                .collect()
        })
        .collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-1.0..=1.0)).collect())
        .collect()
}

fn to_tensor(m: &[Vec<f64>]) -> Tensor {
    let rows: Vec<&[f64]> = m.iter().map(Vec::as_slice).collect();
    Tensor::from_rows(&rows).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // shared centers and exp: elementwise relative error
    let mut worst_rel = 0.0f64;
    // own centers and std exp: error relative to the summed term magnitude
    let mut worst_scaled = 0.0f64;
    let mut worst_rel_independent = 0.0f64;
    for _ in 0..1000 {
        let k = [2, 10, 25][rng.gen_range(0..3)];
        let n = rng.gen_range(1..=50);
        let c = rng.gen_range(1..=16);
        let values = random_matrix(&mut rng, n, c);
        let grad = random_matrix(&mut rng, k, c);
        let layout = BinLayout::new(k).unwrap();
        let got =
            histogram_backward(&to_tensor(&values), &to_tensor(&grad), &layout, 20.0).unwrap();
        let shared = oracle_histogram_backward(&values, &grad, layout.centers(), 20.0, libm::exp);
        let own_centers: Vec<f64> = (0..k)
            .map(|i| -1.0 + (2 * i + 1) as f64 / k as f64)
            .collect();
        let independent = oracle_histogram_backward(&values, &grad, &own_centers, 20.0, f64::exp);
        for l in 0..n {
            for j in 0..c {
                let a = got.at(l, j);
                let (e, _) = shared[l][j];
                let diff = (a - e).abs();
                if diff > 0.0 {
                    worst_rel = worst_rel.max(diff / a.abs().max(e.abs()));
                }
                let (e, mag) = independent[l][j];
                let diff = (a - e).abs();
                if diff > 0.0 {
                    worst_scaled = worst_scaled.max(diff / mag);
                    worst_rel_independent = worst_rel_independent.max(diff / a.abs().max(e.abs()));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst_rel <= 1e-12 && worst_scaled <= 1e-12 && within(elapsed, Duration::from_secs(10)),
        format!(
            "1000 instances, max rel err {worst_rel:.2e} (tol 1e-12); independent centers and exp: \
             {worst_scaled:.2e} of term magnitude (tol 1e-12), {worst_rel_independent:.2e} elementwise; \
             {:.2} s (limit 10 s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let reports = run_cases(&standard_cases(), 20, 2, 1e-5, 1e-4).unwrap();
    let elapsed = start.elapsed();
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} ({:.2e})", r.name, r.max_rel_error))
        .collect();
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    outcome(
        failed.is_empty() && within(elapsed, Duration::from_secs(60)),
        format!(
            "{} kernels x 20 shapes, max rel err {worst:.2e} (tol 1e-4), {:.1} s (limit 60 s){}",
            reports.len(),
            elapsed.as_secs_f64(),
            if failed.is_empty() {
                String::new()
            } else {
                format!(", failing: {}", failed.join(", "))
            }
        ),
    )
}

/// Coordinates checked per head tensor; tensors at most this large are
/// checked exhaustively.
const HEAD_BUDGET: usize = 2048;

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let ds = synth_dataset(SynthKind::StarsVsCycles, 6, (10, 30), 7).unwrap();
    let cfg = ModelConfig::new(25, 2, 8, 0.2, ds.m(), ds.feature_width());
    let net = Network::new(cfg.clone()).unwrap();
    let mut params = init_params(&cfg, 7).unwrap();
    randomize_biases(&mut params, 7, 0.1);
    let graphs: Vec<&Graph> = ds.graphs()[..3].iter().collect();
    let batch = make_batch(&graphs, &ds.labels()[..3]).unwrap();
    let opts = HeadCheckOptions {
        budget: HEAD_BUDGET,
        ..HeadCheckOptions::default()
    };
    let reports = head_grad_check(&net, &batch, &params, &opts).unwrap();
    let elapsed = start.elapsed();
    let checked: usize = reports.iter().map(|r| r.checked).sum();
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.as_str())
        .collect();
    outcome(
        !reports.is_empty() && failed.is_empty() && within(elapsed, Duration::from_secs(300)),
        format!(
            "{} head tensors, {checked} coordinates, max rel err {worst:.2e} (tol 1e-4), {:.1} s (limit 300 s){}",
            reports.len(),
            elapsed.as_secs_f64(),
            if failed.is_empty() { String::new() } else { format!(", failing: {}", failed.join(", ")) }
        ),
    )
}

fn random_graph(rng: &mut ChaCha8Rng, max_n: usize) -> Graph {
    let n = rng.gen_range(1..=max_n);
    let p: f64 = rng.gen_range(0.0..1.0);
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                pairs.push((i, j));
            }
        }
    }
    Graph::unweighted(n, pairs).unwrap().add_self_loops()
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut conserved = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=60);
        let c = rng.gen_range(1..=16);
        let k = rng.gen_range(2..=40);
        let mut values = random_matrix(&mut rng, n, c);
        // include the closed ends of the range
        values[0][0] = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let h = histogram_forward(&to_tensor(&values), &BinLayout::new(k).unwrap()).unwrap();
        if (0..c).all(|j| (0..k).map(|i| h.at(i, j)).sum::<f64>() == n as f64) {
            conserved += 1;
        }
    }

    let mut in_range = 0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..200 {
        let g = random_graph(&mut rng, 12);
        let dense = SparseLaplacian::normalized(&g).unwrap().to_dense();
        let n = g.n();
        let m = DMatrix::from_fn(n, n, |i, j| dense.at(i, j));
        let eig = SymmetricEigen::new(m).eigenvalues;
        let (a, b) = (eig.min(), eig.max());
        lo = lo.min(a);
        hi = hi.max(b);
        if a >= -1e-9 && b <= 2.0 + 1e-9 {
            in_range += 1;
        }
    }
    outcome(
        conserved == 1000 && in_range == 200,
        format!("{conserved}/1000 histograms conserve n exactly; {in_range}/200 spectra in [-1e-9, 2+1e-9] (observed [{lo:.3e}, {hi:.6}])"),
    )
}

const SMOKE_SEEDS: [u64; 5] = [7, 8, 9, 10, 11];

/// 40 training graphs followed by 20 held-out graphs from an independent
/// seed, all stars versus cycles with 10 to 30 nodes.
fn smoke_dataset(seed: u64) -> GraphDataset {
    let train = synth_dataset(SynthKind::StarsVsCycles, 40, (10, 30), seed).unwrap();
    let held = synth_dataset(SynthKind::StarsVsCycles, 20, (10, 30), seed + 1000).unwrap();
    let graphs: Vec<Graph> = train
        .graphs()
        .iter()
        .chain(held.graphs())
        .cloned()
        .collect();
    let labels: Vec<usize> = train
        .labels()
        .iter()
        .chain(held.labels())
        .copied()
        .collect();
    GraphDataset::new("stars_vs_cycles", graphs, labels).unwrap()
}

fn smoke_run(seed: u64) -> FoldOutcome {
    let ds = smoke_dataset(seed);
    let model = ModelConfig::new(25, 2, 8, 0.2, ds.m(), ds.feature_width());
    let config = TrainConfig {
        seed,
        max_epochs: 200,
        track_train_accuracy: true,
        ..TrainConfig::default()
    };
    let train: Vec<usize> = (0..40).collect();
    let held: Vec<usize> = (40..60).collect();
    train_fold(&ds, &train, &held, &model, &config).unwrap()
}

static SEED_7: OnceLock<FoldOutcome> = OnceLock::new();

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut notes = Vec::new();
    for seed in SMOKE_SEEDS {
        let run = if seed == 7 {
            SEED_7.get_or_init(|| smoke_run(7)).clone()
        } else {
            smoke_run(seed)
        };
        let reached = run
            .history
            .iter()
            .position(|r| r.train_accuracy == Some(1.0));
        let held = run.metrics.accuracy;
        let ok = reached.is_some() && held >= 0.9;
        wins += usize::from(ok);
        notes.push(format!(
            "seed {seed}: train 100% {}, held-out {:.0}%",
            reached.map_or("never".into(), |e| format!("at epoch {}", e + 1)),
            100.0 * held
        ));
    }
    let elapsed = start.elapsed();
    outcome(
        wins >= 4 && within(elapsed, Duration::from_secs(300)),
        format!(
            "{wins}/5 seeds (need 4), {:.0} s (limit 300 s); {}",
            elapsed.as_secs_f64(),
            notes.join("; ")
        ),
    )
}

/// Criterion 6 data location.
const IMDB_ENV: &str = "GRAPHHIST_IMDB_DIR";

fn criterion_6() -> Outcome {
    let Some(dir) = std::env::var_os(IMDB_ENV).map(PathBuf::from) else {
        return outcome(
            false,
            format!("{IMDB_ENV} is not set; point it at the IMDB-BINARY TU directory"),
        );
    };
    let start = Instant::now();
    let ds = match load_tu_dataset(&dir, None, false) {
        Ok(ds) => ds,
        Err(e) => return outcome(false, format!("cannot load {}: {e}", dir.display())),
    };
    let model = ModelConfig::new(50, 2, 128, 0.8, ds.m(), ds.feature_width());
    let config = TrainConfig::default();
    let plan = split_folds(ds.labels(), 10, config.seed).unwrap();
    let fold = &plan.folds[0];
    let data = Prepared::new(&ds).unwrap();
    let result = run_fold(&data, 0, &fold.train, &fold.test, &model, &config).unwrap();
    let elapsed = start.elapsed();
    let acc = result.metrics.accuracy;
    outcome(
        acc >= 0.65 && within(elapsed, Duration::from_secs(4 * 3600)),
        format!(
            "{}: fold 1 of 10, test accuracy {:.1}% (need 65%), best epoch {}, {:.0} min (limit 240 min)",
            ds.name,
            100.0 * acc,
            result.best_epoch,
            elapsed.as_secs_f64() / 60.0
        ),
    )
}

fn bits(run: &FoldOutcome) -> Vec<[u64; 6]> {
    run.history
        .iter()
        .map(|r| {
            [
                r.lr.to_bits(),
                r.train_loss.to_bits(),
                r.eval_loss.to_bits(),
                r.eval_accuracy.to_bits(),
                r.eval_f1.to_bits(),
                r.train_accuracy.unwrap_or(f64::NAN).to_bits(),
            ]
        })
        .collect()
}

fn criterion_7() -> Outcome {
    let first = SEED_7.get_or_init(|| smoke_run(7));
    let second = smoke_run(7);
    let same_history = bits(first) == bits(&second);
    let same_params = first.params == second.params;
    outcome(
        same_history && same_params,
        format!(
            "seed 7 twice: {} epochs each, histories {}, parameters {}",
            second.history.len(),
            if same_history {
                "bitwise identical"
            } else {
                "differ"
            },
            if same_params { "identical" } else { "differ" }
        ),
    )
}

fn criterion_8() -> Outcome {
    // TP / (TP + FP) = 0.683 and TP / (TP + FN) = 0.807 exactly
    let (tp, fp, fn_, tn) = (551_181usize, 255_819usize, 131_819usize, 1_000usize);
    let mut labels = Vec::with_capacity(tp + fp + fn_ + tn);
    let mut preds = Vec::with_capacity(labels.capacity());
    for (count, label, pred) in [(tp, 1, 1), (fp, 0, 1), (fn_, 1, 0), (tn, 0, 0)] {
        labels.extend(std::iter::repeat_n(label, count));
        preds.extend(std::iter::repeat_n(pred, count));
    }
    let m = compute_metrics(&preds, &labels, 2, 1);
    let (p, r) = (0.683, 0.807);
    let oracle = 2.0 * p * r / (p + r);
    let ok = (m.precision - p).abs() < 1e-12
        && (m.recall - r).abs() < 1e-12
        && (m.f1 - oracle).abs() < 1e-12
        && (m.f1 - 0.740).abs() <= 5e-4;
    outcome(
        ok,
        format!(
            "precision {:.4}, recall {:.4}, F1 {:.6} (target 0.740, tol 5e-4)",
            m.precision, m.recall, m.f1
        ),
    )
}

struct Criterion {
    id: u32,
    title: &'static str,
    slow: bool,
    run: fn() -> Outcome,
}

const CRITERIA: [Criterion; 8] = [
    Criterion {
        id: 1,
        title: "binning backward matches oracle",
        slow: false,
        run: criterion_1,
    },
    Criterion {
        id: 2,
        title: "kernel finite-difference suite",
        slow: false,
        run: criterion_2,
    },
    Criterion {
        id: 3,
        title: "head gradients vs full-model loss",
        slow: false,
        run: criterion_3,
    },
    Criterion {
        id: 4,
        title: "histogram conservation and Laplacian spectrum",
        slow: false,
        run: criterion_4,
    },
    Criterion {
        id: 5,
        title: "stars vs cycles learning smoke test",
        slow: false,
        run: criterion_5,
    },
    Criterion {
        id: 6,
        title: "IMDB-B single fold",
        slow: true,
        run: criterion_6,
    },
    Criterion {
        id: 7,
        title: "bitwise-deterministic training",
        slow: false,
        run: criterion_7,
    },
    Criterion {
        id: 8,
        title: "F1 from precision and recall",
        slow: false,
        run: criterion_8,
    },
];

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for c in &CRITERIA {
            println!("criterion_{}: test", c.id);
        }
        return ExitCode::SUCCESS;
    }
    let include_slow = args
        .iter()
        .any(|a| a == "--include-ignored" || a == "--ignored")
        || std::env::var_os(IMDB_ENV).is_some();
    let selected: Vec<u32> = args.iter().filter_map(|a| a.parse().ok()).collect();

    let (mut passed, mut failed, mut skipped) = (0, 0, 0);
    for c in CRITERIA
        .iter()
        .filter(|c| selected.is_empty() || selected.contains(&c.id))
    {
        if c.slow && !include_slow {
            println!(
                "acceptance criterion {}: {} ... SKIP (slow; set {IMDB_ENV} or pass --include-ignored)",
                c.id, c.title
            );
            skipped += 1;
            continue;
        }
        let result = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let verdict = if result.passed { "PASS" } else { "FAIL" };
        println!(
            "acceptance criterion {}: {} ... {verdict} ({})",
            c.id, c.title, result.detail
        );
        if result.passed {
            passed += 1;
        } else {
            failed += 1;
        }
    }
    println!("\nacceptance: {passed} passed, {failed} failed, {skipped} skipped");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
