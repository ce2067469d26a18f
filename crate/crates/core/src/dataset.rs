//! Labeled graph collections, fold plans, oversampling, mini-batches and
//! synthetic corpora.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::Range;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::graph::Graph;
use crate::laplacian::SparseLaplacian;
use crate::tensor::Tensor;

/// Graphs with class labels in `0..m`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    graphs: Vec<Graph>,
    labels: Vec<usize>,
    m: usize,
}

impl GraphDataset {
    /// Checks that labels are dense: every class in `0..m` occurs, where
    /// `m` is one more than the largest label.
    pub fn new(name: impl Into<String>, graphs: Vec<Graph>, labels: Vec<usize>) -> Result<Self> {
        if graphs.len() != labels.len() {
            return Err(Error::InvalidDataset(alloc::format!(
                "{} graphs but {} labels",
                graphs.len(),
                labels.len()
            )));
        }
        if graphs.is_empty() {
            return Err(Error::EmptyInput("dataset"));
        }
        let m = labels.iter().max().map_or(0, |&l| l + 1);
        let mut seen = alloc::vec![false; m];
        for &l in &labels {
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidDataset(alloc::format!(
                "class {missing} has no graphs"
            )));
        }
        Ok(GraphDataset {
            name: name.into(),
            graphs,
            labels,
            m,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Number of classes.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Width of the node features the model will see.
    pub fn feature_width(&self) -> usize {
        self.graphs[0].features().map_or(2, |f| f.cols())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.m];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn mean_nodes(&self) -> f64 {
        self.graphs.iter().map(|g| g.n() as f64).sum::<f64>() / self.len() as f64
    }

    /// Subset in the order of `indices`.
    pub fn subset(&self, indices: &[usize]) -> Vec<(&Graph, usize)> {
        indices
            .iter()
            .map(|&i| (&self.graphs[i], self.labels[i]))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Disjoint test folds covering every index exactly once.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
    pub seed: u64,
    /// Classes with fewer members than folds, spread on a best-effort basis.
    pub warnings: Vec<String>,
}

/// Stratified k-fold split.
///
/// Each class's indices are shuffled with `seed` and dealt round-robin over
/// the folds. The dealing position carries over from one class to the next,
/// so total fold sizes also differ by at most one.
pub fn split_folds(labels: &[usize], n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 2 {
        return Err(Error::InvalidConfig(alloc::format!(
            "need at least 2 folds, got {n_folds}"
        )));
    }
    if labels.len() < n_folds {
        return Err(Error::InvalidConfig(alloc::format!(
            "{} graphs cannot fill {n_folds} folds",
            labels.len()
        )));
    }
    let m = labels.iter().max().map_or(0, |&l| l + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tests: Vec<Vec<usize>> = (0..n_folds).map(|_| Vec::new()).collect();
    let mut warnings = Vec::new();
    let mut slot = 0;
    for class in 0..m {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if !members.is_empty() && members.len() < n_folds {
            let msg = alloc::format!(
                "class {class} has {} members for {n_folds} folds; some test folds will lack it",
                members.len()
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        members.shuffle(&mut rng);
        for idx in members {
            tests[slot].push(idx);
            slot = (slot + 1) % n_folds;
        }
    }
    let folds = tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let mut in_test = alloc::vec![false; labels.len()];
            for &i in &test {
                in_test[i] = true;
            }
            let train = (0..labels.len()).filter(|&i| !in_test[i]).collect();
            Fold { train, test }
        })
        .collect();
    Ok(FoldPlan {
        folds,
        seed,
        warnings,
    })
}

/// Stratified split of `indices` into `(rest, held_out)` with roughly
/// `fraction` of each class held out.
pub fn holdout_split(
    indices: &[usize],
    labels: &[usize],
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let m = indices.iter().map(|&i| labels[i] + 1).max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rest = Vec::new();
    let mut held = Vec::new();
    for class in 0..m {
        let mut members: Vec<usize> = indices
            .iter()
            .copied()
            .filter(|&i| labels[i] == class)
            .collect();
        members.shuffle(&mut rng);
        let take = libm::round(members.len() as f64 * fraction) as usize;
        // keep at least one training example per class
        let take = take.min(members.len().saturating_sub(1));
        held.extend_from_slice(&members[..take]);
        rest.extend_from_slice(&members[take..]);
    }
    rest.sort_unstable();
    held.sort_unstable();
    (rest, held)
}

/// Random oversampling: minority classes are resampled with replacement
/// until every class present matches the majority count; the result is
/// shuffled.
pub fn oversample(indices: &[usize], labels: &[usize], seed: u64) -> Result<Vec<usize>> {
    if indices.is_empty() {
        return Err(Error::EmptyInput("oversample"));
    }
    let m = indices.iter().map(|&i| labels[i] + 1).max().unwrap_or(0);
    let mut by_class: Vec<Vec<usize>> = (0..m).map(|_| Vec::new()).collect();
    for &i in indices {
        by_class[labels[i]].push(i);
    }
    let majority = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(majority * m);
    for members in by_class.iter().filter(|c| !c.is_empty()) {
        out.extend_from_slice(members);
        for _ in members.len()..majority {
            out.push(members[rng.gen_range(0..members.len())]);
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Several graphs packed into one block-diagonal system.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub laplacian: SparseLaplacian,
    pub features: Tensor,
    /// Node range of each member graph in `features` and `laplacian`.
    pub ranges: Vec<Range<usize>>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.laplacian.n()
    }

    /// Assembles a batch from precomputed per-graph Laplacians and features.
    pub fn from_parts(parts: &[(&SparseLaplacian, &Tensor, usize)]) -> Result<Batch> {
        let (first_lap, first_feat, _) = parts.first().ok_or(Error::EmptyInput("batch"))?;
        let width = first_feat.cols();
        let total: usize = parts.iter().map(|p| p.0.n()).sum();
        let mut data = Vec::with_capacity(total * width);
        let mut ranges = Vec::with_capacity(parts.len());
        let mut start = 0;
        for (lap, feat, _) in parts {
            if feat.rank() != 2 || feat.cols() != width || feat.rows() != lap.n() {
                return Err(shape_err!(
                    "batch",
                    "features {:?} for a {}-node graph, expected width {}",
                    feat.shape(),
                    lap.n(),
                    width
                ));
            }
            data.extend_from_slice(feat.data());
            ranges.push(start..start + lap.n());
            start += lap.n();
        }
        let laplacian = if parts.len() == 1 {
            (*first_lap).clone()
        } else {
            SparseLaplacian::block_diagonal(parts.iter().map(|p| p.0))
        };
        Ok(Batch {
            laplacian,
            features: Tensor::from_vec(&[total, width], data)?,
            ranges,
            labels: parts.iter().map(|p| p.2).collect(),
        })
    }
}

/// Builds a batch directly from graphs (which should carry self-loops).
pub fn make_batch(graphs: &[&Graph], labels: &[usize]) -> Result<Batch> {
    if graphs.len() != labels.len() {
        return Err(shape_err!(
            "batch",
            "{} graphs, {} labels",
            graphs.len(),
            labels.len()
        ));
    }
    let laps = graphs
        .iter()
        .map(|g| SparseLaplacian::normalized(g))
        .collect::<Result<Vec<_>>>()?;
    let feats: Vec<Tensor> = graphs.iter().map(|g| g.features_or_default()).collect();
    let parts: Vec<_> = laps
        .iter()
        .zip(&feats)
        .zip(labels)
        .map(|((l, f), &y)| (l, f, y))
        .collect();
    Batch::from_parts(&parts)
}

/// Synthetic corpus generators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SynthKind {
    /// Star graphs (class 0) against cycles (class 1).
    StarsVsCycles,
    /// Erdős–Rényi graphs with edge probability 0.1 (class 0) or 0.3 (class 1).
    ErDensityPair,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stars_vs_cycles" => Ok(SynthKind::StarsVsCycles),
            "er_density_pair" => Ok(SynthKind::ErDensityPair),
            other => Err(Error::InvalidConfig(alloc::format!(
                "unknown synthetic kind {other:?}"
            ))),
        }
    }
}

impl SynthKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SynthKind::StarsVsCycles => "stars_vs_cycles",
            SynthKind::ErDensityPair => "er_density_pair",
        }
    }
}

pub const ER_PROBABILITIES: [f64; 2] = [0.1, 0.3];

/// Generates `count` labeled graphs alternating between the two classes,
/// with node counts drawn uniformly from `sizes`.
pub fn synth_dataset(
    kind: SynthKind,
    count: usize,
    sizes: (usize, usize),
    seed: u64,
) -> Result<GraphDataset> {
    let (min, max) = sizes;
    if min < 3 || min > max {
        return Err(Error::SizeRange { min, max });
    }
    if count < 2 {
        return Err(Error::InvalidConfig(
            "need at least one graph per class".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graphs = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for idx in 0..count {
        let class = idx % 2;
        let n = rng.gen_range(min..=max);
        let graph = match (kind, class) {
            (SynthKind::StarsVsCycles, 0) => Graph::unweighted(n, (1..n).map(|i| (0, i)))?,
            (SynthKind::StarsVsCycles, _) => {
                Graph::unweighted(n, (0..n).map(|i| (i, (i + 1) % n)))?
            }
            (SynthKind::ErDensityPair, c) => {
                let p = ER_PROBABILITIES[c];
                let mut pairs = Vec::new();
                for i in 0..n {
                    for j in i + 1..n {
                        if rng.gen::<f64>() < p {
                            pairs.push((i, j));
                        }
                    }
                }
                Graph::unweighted(n, pairs)?
            }
        };
        let graph = graph.add_self_loops();
        let features = graph.default_features();
        graphs.push(graph.with_features(features)?);
        labels.push(class);
    }
    GraphDataset::new(kind.as_str(), graphs, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn labels_two_classes(a: usize, b: usize) -> Vec<usize> {
        let mut l = vec![0; a];
        l.extend(vec![1; b]);
        l
    }

    #[test]
    fn dataset_label_checks() {
        let g = Graph::new(1, []).unwrap();
        assert!(GraphDataset::new("x", vec![g.clone()], vec![]).is_err());
        assert!(GraphDataset::new("x", vec![g.clone(), g.clone()], vec![0, 2]).is_err());
        let ds = GraphDataset::new("x", vec![g.clone(), g], vec![1, 0]).unwrap();
        assert_eq!(ds.m(), 2);
    }

    #[test]
    fn fold_sizes_and_stratification() {
        let labels = labels_two_classes(500, 500);
        let plan = split_folds(&labels, 10, 3).unwrap();
        assert_eq!(plan.folds.len(), 10);
        for fold in &plan.folds {
            assert_eq!(fold.test.len(), 100);
            assert_eq!(fold.train.len(), 900);
            let ones = fold.test.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!(ones, 50);
        }
        assert!(plan.warnings.is_empty());
        assert_eq!(plan, split_folds(&labels, 10, 3).unwrap());
        assert_ne!(plan, split_folds(&labels, 10, 4).unwrap());
    }

    #[test]
    fn fold_errors_and_warnings() {
        let labels = labels_two_classes(10, 2);
        assert!(split_folds(&labels, 1, 0).is_err());
        assert!(split_folds(&labels[..3], 5, 0).is_err());
        let plan = split_folds(&labels, 5, 0).unwrap();
        assert_eq!(plan.warnings.len(), 1);
        let total: usize = plan.folds.iter().map(|f| f.test.len()).sum();
        assert_eq!(total, 12);
    }

    #[test]
    fn oversample_balances() {
        let labels = [0, 0, 0, 1];
        let out = oversample(&[0, 1, 2, 3], &labels, 1).unwrap();
        assert_eq!(out.len(), 6);
        assert_eq!(out.iter().filter(|&&i| i == 3).count(), 3);

        let balanced = oversample(&[0, 3], &labels, 1).unwrap();
        let mut sorted = balanced.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 3]);

        assert_eq!(
            oversample(&[], &labels, 1),
            Err(Error::EmptyInput("oversample"))
        );
    }

    #[test]
    fn oversample_bot_dataset_counts() {
        let labels = labels_two_classes(8842, 6120);
        let idx: Vec<usize> = (0..labels.len()).collect();
        let out = oversample(&idx, &labels, 9).unwrap();
        let bots = out.iter().filter(|&&i| labels[i] == 0).count();
        let humans = out.len() - bots;
        assert_eq!((bots, humans), (8842, 8842));
    }

    #[test]
    fn batch_of_two_graphs() {
        let g = Graph::unweighted(2, [(0, 1)]).unwrap().add_self_loops();
        let b = make_batch(&[&g, &g], &[0, 1]).unwrap();
        assert_eq!(b.node_count(), 4);
        assert_eq!(b.ranges, vec![0..2, 2..4]);
        assert_eq!(b.features.shape(), &[4, 2]);
        for i in 0..2 {
            for j in 2..4 {
                assert_eq!(b.laplacian.get(i, j), 0.0);
                assert_eq!(b.laplacian.get(j, i), 0.0);
            }
        }
        let single = make_batch(&[&g], &[0]).unwrap();
        assert_eq!(single.laplacian, SparseLaplacian::normalized(&g).unwrap());
    }

    #[test]
    fn batch_rejects_mixed_feature_widths() {
        let a = Graph::new(1, []).unwrap().add_self_loops();
        let b = Graph::new(1, [])
            .unwrap()
            .add_self_loops()
            .with_features(Tensor::zeros(&[1, 3]))
            .unwrap();
        assert!(make_batch(&[&a, &b], &[0, 0]).is_err());
    }

    #[test]
    fn stars_and_cycles() {
        let ds = synth_dataset(SynthKind::StarsVsCycles, 40, (10, 30), 5).unwrap();
        assert_eq!(ds.class_counts(), vec![20, 20]);
        for (g, &y) in ds.graphs().iter().zip(ds.labels()) {
            assert!(g.n() >= 10 && g.n() <= 30);
            let mut d = g.degree_vector();
            d.sort_by(f64::total_cmp);
            if y == 0 {
                assert_eq!(d[g.n() - 1], g.n() as f64);
                assert!(d[..g.n() - 1].iter().all(|&x| x == 2.0));
            } else {
                assert!(d.iter().all(|&x| x == 3.0));
            }
        }
        assert_eq!(
            ds,
            synth_dataset(SynthKind::StarsVsCycles, 40, (10, 30), 5).unwrap()
        );
    }

    #[test]
    fn er_pair_density_differs() {
        let ds = synth_dataset(SynthKind::ErDensityPair, 40, (20, 20), 1).unwrap();
        let mut density = [0.0; 2];
        for (g, &y) in ds.graphs().iter().zip(ds.labels()) {
            density[y] += g.undirected_edge_count() as f64 / 190.0 / 20.0;
        }
        assert!((density[0] - 0.1).abs() < 0.03, "{density:?}");
        assert!((density[1] - 0.3).abs() < 0.03, "{density:?}");
    }

    #[test]
    fn synth_size_validation() {
        assert_eq!(
            synth_dataset(SynthKind::StarsVsCycles, 10, (2, 5), 0),
            Err(Error::SizeRange { min: 2, max: 5 })
        );
        assert!(synth_dataset(SynthKind::StarsVsCycles, 10, (6, 5), 0).is_err());
        assert_eq!(
            "er_density_pair".parse::<SynthKind>(),
            Ok(SynthKind::ErDensityPair)
        );
        assert!("trees".parse::<SynthKind>().is_err());
    }

    #[test]
    fn holdout_keeps_classes() {
        let labels = labels_two_classes(20, 20);
        let idx: Vec<usize> = (0..40).collect();
        let (rest, held) = holdout_split(&idx, &labels, 0.1, 0);
        assert_eq!(held.len(), 4);
        assert_eq!(rest.len(), 36);
        assert_eq!(held.iter().filter(|&&i| labels[i] == 1).count(), 2);
    }
}
