//! Undirected weighted graphs with optional node features.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Undirected weighted graph.
///
/// Edges are stored in both directions with equal weight, sorted by
/// `(source, target)`. A pair given more than once keeps the last weight.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    features: Option<Tensor>,
}

impl Graph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut map = BTreeMap::new();
        for (i, j, w) in edges {
            for node in [i, j] {
                if node >= n {
                    return Err(Error::NodeOutOfRange { node, n });
                }
            }
            map.insert((i, j), w);
            map.insert((j, i), w);
        }
        Ok(Graph {
            n,
            edges: map.into_iter().map(|((i, j), w)| (i, j, w)).collect(),
            features: None,
        })
    }

    /// Unweighted graph from index pairs.
    pub fn unweighted(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Graph::new(n, pairs.into_iter().map(|(i, j)| (i, j, 1.0)))
    }

    /// Attaches an `n x f` feature matrix.
    pub fn with_features(mut self, features: Tensor) -> Result<Self> {
        if features.rank() != 2 || features.rows() != self.n {
            return Err(shape_err!(
                "graph features",
                "expected {} rows, got shape {:?}",
                self.n,
                features.shape()
            ));
        }
        self.features = Some(features);
        Ok(self)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Directed entries `(i, j, w)`; every off-diagonal entry has its mirror.
    #[inline]
    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    #[inline]
    pub fn features(&self) -> Option<&Tensor> {
        self.features.as_ref()
    }

    /// Number of undirected edges, self-loops excluded.
    pub fn undirected_edge_count(&self) -> usize {
        self.edges.iter().filter(|(i, j, _)| i < j).count()
    }

    pub fn has_self_loops(&self) -> bool {
        let mut seen = 0;
        for &(i, j, w) in &self.edges {
            if i == j && w == 1.0 {
                seen += 1;
            }
        }
        seen == self.n
    }

    /// Sets `A[i][i] = 1` for every node, overwriting existing loop weights.
    pub fn add_self_loops(self) -> Graph {
        let mut edges: Vec<_> = self.edges.into_iter().filter(|(i, j, _)| i != j).collect();
        edges.extend((0..self.n).map(|i| (i, i, 1.0)));
        edges.sort_by_key(|e| (e.0, e.1));
        Graph {
            n: self.n,
            edges,
            features: self.features,
        }
    }

    /// Weighted degree `d_i = sum_j A[i][j]`, self-loop included.
    pub fn degree_vector(&self) -> Vec<f64> {
        let mut degree = alloc::vec![0.0; self.n];
        // edges are sorted by source, so each row is summed in column order
        for &(i, _, w) in &self.edges {
            degree[i] += w;
        }
        degree
    }

    /// Degree column plus a constant-one column, for graphs without features.
    pub fn default_features(&self) -> Tensor {
        let degree = self.degree_vector();
        let mut out = Tensor::zeros(&[self.n, 2]);
        for (i, d) in degree.into_iter().enumerate() {
            out.set(i, 0, d);
            out.set(i, 1, 1.0);
        }
        out
    }

    /// The attached features, or [`Graph::default_features`] when none are set.
    pub fn features_or_default(&self) -> Tensor {
        match &self.features {
            Some(f) => f.clone(),
            None => self.default_features(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn self_loops_on_single_edge() {
        let g = Graph::unweighted(2, [(0, 1)]).unwrap().add_self_loops();
        assert_eq!(
            g.edges(),
            &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]
        );
        assert!(g.has_self_loops());
    }

    #[test]
    fn self_loops_on_edgeless_graph() {
        let g = Graph::new(3, []).unwrap().add_self_loops();
        assert_eq!(g.edges(), &[(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0)]);
    }

    #[test]
    fn existing_loop_weight_is_replaced() {
        let g = Graph::new(2, [(0, 0, 5.0), (0, 1, 1.0)])
            .unwrap()
            .add_self_loops();
        assert!(g.edges().contains(&(0, 0, 1.0)));
        assert!(!g.edges().iter().any(|e| e.2 == 5.0));
    }

    #[test]
    fn out_of_range_node_rejected() {
        assert_eq!(
            Graph::unweighted(2, [(0, 2)]),
            Err(Error::NodeOutOfRange { node: 2, n: 2 })
        );
        assert_eq!(Graph::new(0, []), Err(Error::EmptyGraph));
    }

    #[test]
    fn degrees() {
        let g = Graph::unweighted(2, [(0, 1)]).unwrap().add_self_loops();
        assert_eq!(g.degree_vector(), vec![2.0, 2.0]);

        let lone = Graph::new(1, []).unwrap().add_self_loops();
        assert_eq!(lone.degree_vector(), vec![1.0]);

        let weighted = Graph::new(2, [(0, 1, 3.0)]).unwrap().add_self_loops();
        assert_eq!(weighted.degree_vector(), vec![4.0, 4.0]);
    }

    #[test]
    fn default_feature_columns() {
        let g = Graph::unweighted(2, [(0, 1)]).unwrap().add_self_loops();
        assert_eq!(g.default_features().data(), &[2.0, 1.0, 2.0, 1.0]);

        let lone = Graph::new(1, []).unwrap().add_self_loops();
        assert_eq!(lone.default_features().data(), &[1.0, 1.0]);
    }

    #[test]
    fn provided_features_take_precedence() {
        let feats = Tensor::from_rows(&[&[0.5], &[0.25]]).unwrap();
        let g = Graph::unweighted(2, [(0, 1)])
            .unwrap()
            .add_self_loops()
            .with_features(feats.clone())
            .unwrap();
        assert_eq!(g.features_or_default(), feats);
    }
}
