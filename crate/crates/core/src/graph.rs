//! Attributed graphs `(C, F, h)` and labeled graph collections.
//!
//! A [`Graph`] carries a symmetric structure matrix (adjacency or hop
//! counts), one feature row per node and a probability vector of node
//! weights. The neighbour lists used for message passing are kept next to
//! the structure so that a shortest-path graph can still be aggregated over
//! its original edges.

use std::collections::VecDeque;
use std::fmt;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{dimension, validation, Result};

/// Tolerance on `sum(h) == 1` for node weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// How the structure matrix of a graph is derived from its edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StructureKind {
    Adjacency,
    ShortestPath,
}

impl StructureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StructureKind::Adjacency => "adj",
            StructureKind::ShortestPath => "sp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "adj" | "adjacency" => Ok(StructureKind::Adjacency),
            "sp" | "shortest_path" | "shortestpath" | "shortest-path" => {
                Ok(StructureKind::ShortestPath)
            }
            other => Err(validation(format!("unknown structure kind '{other}'"))),
        }
    }
}

impl fmt::Display for StructureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    structure: Array2<f64>,
    features: Array2<f64>,
    weights: Array1<f64>,
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from an explicit structure matrix. Neighbours are the
    /// nonzero off-diagonal entries of `structure`.
    pub fn new(structure: Array2<f64>, features: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        let neighbors = neighbors_of(structure.view());
        let g = Graph {
            structure,
            features,
            weights,
            neighbors,
        };
        g.validate()?;
        Ok(g)
    }

    /// Builds a graph from a 0/1 adjacency matrix with uniform node weights.
    pub fn from_adjacency(adjacency: Array2<f64>, features: Array2<f64>, kind: StructureKind) -> Result<Self> {
        let n = adjacency.nrows();
        if n == 0 {
            return Err(validation("graph must have at least one node"));
        }
        check_symmetric(adjacency.view())?;
        let neighbors = neighbors_of(adjacency.view());
        let structure = match kind {
            StructureKind::Adjacency => adjacency,
            StructureKind::ShortestPath => shortest_path_matrix(adjacency.view())?,
        };
        let g = Graph {
            structure,
            features,
            weights: uniform_weights(n),
            neighbors,
        };
        g.validate()?;
        Ok(g)
    }

    /// Graph with the given edge list, constant unit feature and uniform weights.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], kind: StructureKind) -> Result<Self> {
        let mut adj = Array2::zeros((n, n));
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(validation(format!("edge ({i}, {j}) out of range for {n} nodes")));
            }
            if i != j {
                adj[[i, j]] = 1.0;
                adj[[j, i]] = 1.0;
            }
        }
        Graph::from_adjacency(adj, Array2::ones((n, 1)), kind)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.structure.nrows();
        if n == 0 {
            return Err(validation("graph must have at least one node"));
        }
        if self.structure.ncols() != n {
            return Err(dimension(format!(
                "structure is {}x{}, expected square",
                n,
                self.structure.ncols()
            )));
        }
        if self.features.nrows() != n {
            return Err(dimension(format!(
                "features have {} rows for {} nodes",
                self.features.nrows(),
                n
            )));
        }
        if self.weights.len() != n {
            return Err(dimension(format!(
                "weights have length {} for {} nodes",
                self.weights.len(),
                n
            )));
        }
        check_symmetric(self.structure.view())?;
        for i in 0..n {
            if self.structure[[i, i]] != 0.0 {
                return Err(validation(format!("structure diagonal entry {i} is nonzero")));
            }
        }
        if self.structure.iter().any(|&c| !c.is_finite() || c < 0.0) {
            return Err(validation("structure entries must be finite and nonnegative"));
        }
        if self.features.iter().any(|f| !f.is_finite()) {
            return Err(validation("features must be finite"));
        }
        check_simplex(self.weights.as_slice().unwrap_or(&self.weights.to_vec()), WEIGHT_SUM_TOL)?;
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.structure.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn structure(&self) -> &Array2<f64> {
        &self.structure
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn neighbors(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// 0/1 adjacency matrix rebuilt from the neighbour lists.
    pub fn adjacency(&self) -> Array2<f64> {
        let n = self.node_count();
        let mut adj = Array2::zeros((n, n));
        for (i, nb) in self.neighbors.iter().enumerate() {
            for &j in nb {
                adj[[i, j]] = 1.0;
            }
        }
        adj
    }

    /// Same graph with a different feature matrix (row count must match).
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        if features.nrows() != self.node_count() {
            return Err(dimension(format!(
                "features have {} rows for {} nodes",
                features.nrows(),
                self.node_count()
            )));
        }
        Ok(Graph {
            structure: self.structure.clone(),
            features,
            weights: self.weights.clone(),
            neighbors: self.neighbors.clone(),
        })
    }

    /// Recomputes the structure matrix from the neighbour lists.
    pub fn with_structure_kind(&self, kind: StructureKind) -> Result<Self> {
        let adj = self.adjacency();
        let structure = match kind {
            StructureKind::Adjacency => adj,
            StructureKind::ShortestPath => shortest_path_matrix(adj.view())?,
        };
        Ok(Graph {
            structure,
            features: self.features.clone(),
            weights: self.weights.clone(),
            neighbors: self.neighbors.clone(),
        })
    }

    /// Relabels nodes so that new node `perm[i]` is old node `i`
    /// (`C' = P C Pᵀ`, `F' = P F`, `h' = P h`).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.node_count();
        check_permutation(perm, n)?;
        let mut structure = Array2::zeros((n, n));
        let mut features = Array2::zeros(self.features.raw_dim());
        let mut weights = Array1::zeros(n);
        let mut neighbors = vec![Vec::new(); n];
        for i in 0..n {
            let pi = perm[i];
            for j in 0..n {
                structure[[pi, perm[j]]] = self.structure[[i, j]];
            }
            features.row_mut(pi).assign(&self.features.row(i));
            weights[pi] = self.weights[i];
            let mut nb: Vec<usize> = self.neighbors[i].iter().map(|&j| perm[j]).collect();
            nb.sort_unstable();
            neighbors[pi] = nb;
        }
        Ok(Graph {
            structure,
            features,
            weights,
            neighbors,
        })
    }
}

pub fn uniform_weights(n: usize) -> Array1<f64> {
    Array1::from_elem(n, 1.0 / n as f64)
}

fn neighbors_of(structure: ArrayView2<'_, f64>) -> Vec<Vec<usize>> {
    let n = structure.nrows();
    (0..n)
        .map(|i| (0..n).filter(|&j| j != i && structure[[i, j]] != 0.0).collect())
        .collect()
}

pub(crate) fn check_symmetric(m: ArrayView2<'_, f64>) -> Result<()> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(dimension(format!("matrix is {}x{}, expected square", n, m.ncols())));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if m[[i, j]] != m[[j, i]] {
                return Err(validation(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    m[[i, j]],
                    m[[j, i]]
                )));
            }
        }
    }
    Ok(())
}

pub(crate) fn check_simplex(w: &[f64], tol: f64) -> Result<()> {
    if w.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(validation("weights must be finite and nonnegative"));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > tol {
        return Err(validation(format!("weights sum to {s}, expected 1")));
    }
    Ok(())
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(dimension(format!("permutation of length {} for {} nodes", perm.len(), n)));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(validation("not a permutation"));
        }
        seen[p] = true;
    }
    Ok(())
}

/// All-pairs hop counts by breadth-first search from every node.
///
/// Pairs in different connected components get the largest finite hop
/// count of the graph plus one, so the matrix stays finite.
pub fn shortest_path_matrix(adjacency: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_symmetric(adjacency)?;
    let n = adjacency.nrows();
    let nb = neighbors_of(adjacency);
    let mut hops = Array2::from_elem((n, n), usize::MAX);
    let mut queue = VecDeque::with_capacity(n);
    for s in 0..n {
        hops[[s, s]] = 0;
        queue.clear();
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            let du = hops[[s, u]];
            for &v in &nb[u] {
                if hops[[s, v]] == usize::MAX {
                    hops[[s, v]] = du + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    let max_finite = hops.iter().filter(|&&d| d != usize::MAX).copied().max().unwrap_or(0);
    let unreachable = (max_finite + 1) as f64;
    Ok(hops.mapv(|d| if d == usize::MAX { unreachable } else { d as f64 }))
}

/// One-hot node degrees, capped at `max_degree`.
pub fn degree_features(adjacency: ArrayView2<'_, f64>, max_degree: usize) -> Array2<f64> {
    let n = adjacency.nrows();
    let mut out = Array2::zeros((n, max_degree + 1));
    for i in 0..n {
        let deg = (0..n).filter(|&j| j != i && adjacency[[i, j]] != 0.0).count();
        out[[i, deg.min(max_degree)]] = 1.0;
    }
    out
}

/// Graphs with class labels. All graphs share one feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub structure_kind: StructureKind,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        graphs: Vec<Graph>,
        labels: Vec<usize>,
        class_count: usize,
        structure_kind: StructureKind,
    ) -> Result<Self> {
        let ds = LabeledDataset {
            name: name.into(),
            graphs,
            labels,
            class_count,
            structure_kind,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.graphs.len() != self.labels.len() {
            return Err(dimension(format!(
                "{} graphs but {} labels",
                self.graphs.len(),
                self.labels.len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.class_count) {
            return Err(validation(format!(
                "label {bad} out of range for {} classes",
                self.class_count
            )));
        }
        if let Some(first) = self.graphs.first() {
            let d = first.feature_dim();
            if self.graphs.iter().any(|g| g.feature_dim() != d) {
                return Err(dimension("graphs do not share a feature dimension"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(0, Graph::feature_dim)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            name: self.name.clone(),
            graphs: indices.iter().map(|&i| self.graphs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            structure_kind: self.structure_kind,
        }
    }

    pub fn with_structure_kind(&self, kind: StructureKind) -> Result<LabeledDataset> {
        let graphs = self
            .graphs
            .iter()
            .map(|g| g.with_structure_kind(kind))
            .collect::<Result<Vec<_>>>()?;
        Ok(LabeledDataset {
            name: self.name.clone(),
            graphs,
            labels: self.labels.clone(),
            class_count: self.class_count,
            structure_kind: kind,
        })
    }

    /// Median node count, rounded to the nearest integer (halves round up).
    pub fn median_node_count(&self) -> usize {
        let mut sizes: Vec<usize> = self.graphs.iter().map(Graph::node_count).collect();
        if sizes.is_empty() {
            return 0;
        }
        sizes.sort_unstable();
        let m = sizes.len();
        if m % 2 == 1 {
            sizes[m / 2]
        } else {
            (sizes[m / 2 - 1] + sizes[m / 2]).div_ceil(2)
        }
    }

    pub fn max_degree(&self) -> usize {
        self.graphs
            .iter()
            .flat_map(|g| g.neighbors().iter().map(Vec::len))
            .max()
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn path3() -> Array2<f64> {
        array![[0., 1., 0.], [1., 0., 1.], [0., 1., 0.]]
    }

    #[test]
    fn shortest_path_of_path_graph() {
        let sp = shortest_path_matrix(path3().view()).unwrap();
        assert_eq!(sp, array![[0., 1., 2.], [1., 0., 1.], [2., 1., 0.]]);
    }

    #[test]
    fn shortest_path_of_triangle() {
        let tri = array![[0., 1., 1.], [1., 0., 1.], [1., 1., 0.]];
        assert_eq!(shortest_path_matrix(tri.view()).unwrap(), tri);
    }

    #[test]
    fn disconnected_pairs_get_max_plus_one() {
        let g = Graph::from_edges(4, &[(0, 1), (2, 3)], StructureKind::ShortestPath).unwrap();
        let sp = g.structure();
        assert_eq!(sp[[0, 1]], 1.0);
        assert_eq!(sp[[0, 2]], 2.0);
        assert_eq!(sp[[1, 3]], 2.0);
        assert_eq!(sp[[3, 0]], 2.0);
    }

    #[test]
    fn asymmetric_adjacency_rejected() {
        let a = array![[0., 1.], [0., 0.]];
        assert!(matches!(
            shortest_path_matrix(a.view()),
            Err(crate::Error::Validation(_))
        ));
    }

    #[test]
    fn degree_one_hot() {
        let c4 = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)], StructureKind::Adjacency).unwrap();
        let f = degree_features(c4.structure().view(), 5);
        assert_eq!(f.ncols(), 6);
        for row in f.rows() {
            assert_eq!(row[2], 1.0);
            assert_eq!(row.sum(), 1.0);
        }
        let star = Graph::from_edges(4, &[(0, 1), (0, 2), (0, 3)], StructureKind::Adjacency).unwrap();
        let f = degree_features(star.structure().view(), 5);
        assert_eq!(f[[0, 3]], 1.0);
        for i in 1..4 {
            assert_eq!(f[[i, 1]], 1.0);
        }
    }

    #[test]
    fn degree_capped() {
        let edges: Vec<_> = (1..10).map(|j| (0, j)).collect();
        let g = Graph::from_edges(10, &edges, StructureKind::Adjacency).unwrap();
        let f = degree_features(g.structure().view(), 5);
        assert_eq!(f[[0, 5]], 1.0);
        assert_eq!(f.row(0).sum(), 1.0);
    }

    #[test]
    fn graph_validation() {
        let bad_w = Graph::new(path3(), Array2::ones((3, 1)), array![0.5, 0.5, 0.5]);
        assert!(bad_w.is_err());
        let bad_f = Graph::new(path3(), Array2::ones((2, 1)), uniform_weights(3));
        assert!(matches!(bad_f, Err(crate::Error::Dimension(_))));
        let mut diag = path3();
        diag[[1, 1]] = 1.0;
        assert!(Graph::new(diag, Array2::ones((3, 1)), uniform_weights(3)).is_err());
    }

    #[test]
    fn permutation_acts_on_all_parts() {
        let g = Graph::new(
            path3(),
            array![[1.0], [2.0], [3.0]],
            array![0.2, 0.3, 0.5],
        )
        .unwrap();
        let p = g.permuted(&[2, 0, 1]).unwrap();
        // old node 0 (an end of the path) is now node 2
        assert_eq!(p.features()[[2, 0]], 1.0);
        assert_eq!(p.weights()[2], 0.2);
        assert_eq!(p.degree(2), 1);
        assert_eq!(p.degree(0), 2);
        assert_eq!(p.structure()[[2, 0]], 1.0);
    }

    #[test]
    fn median_rounds_half_up() {
        let mk = |n| Graph::from_edges(n, &[], StructureKind::Adjacency).unwrap();
        let ds = LabeledDataset::new("m", vec![mk(2), mk(3), mk(5), mk(6)], vec![0, 0, 1, 1], 2, StructureKind::Adjacency)
            .unwrap();
        assert_eq!(ds.median_node_count(), 4);
    }

    #[test]
    fn edgeless_graph_sp_stays_finite() {
        let g = Graph::from_edges(3, &[], StructureKind::ShortestPath).unwrap();
        assert!(g.structure().iter().all(|c| c.is_finite()));
        assert_eq!(g.structure()[[0, 1]], 1.0);
        // neighbours come from the edges, not from the hop matrix
        assert_eq!(g.edge_count(), 0);
    }
}
