//! Synthetic graph families that plain message passing cannot separate.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{validation, Result};
use crate::graph::{Graph, LabeledDataset, StructureKind};

/// Skip lengths of the circulant classes, in class-index order.
pub const SKIP_LENGTHS: [usize; 10] = [2, 3, 4, 5, 6, 9, 11, 12, 13, 16];

/// Node count of every skip-circle graph.
pub const SKIP_CIRCLE_NODES: usize = 41;

pub const FOUR_CYCLES_NAME: &str = "FOUR_CYCLES";
pub const SKIP_CIRCLES_NAME: &str = "SKIP_CIRCLES";

fn random_perm(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}

/// Edges of disjoint cycles laid out on consecutive node ids.
fn cycle_union_edges(lengths: &[usize]) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    let mut start = 0;
    for &len in lengths {
        for i in 0..len {
            edges.push((start + i, start + (i + 1) % len));
        }
        start += len;
    }
    edges
}

fn permute_edges(edges: &[(usize, usize)], perm: &[usize]) -> Vec<(usize, usize)> {
    edges.iter().map(|&(i, j)| (perm[i], perm[j])).collect()
}

/// Binary dataset of 2-regular graphs on `nodes_per_graph` nodes.
///
/// Label 1 graphs are a 4-cycle plus an `(n-4)`-cycle; label 0 graphs are
/// two `n/2`-cycles, so they contain no 4-cycle. Node order is shuffled per
/// graph and every node carries the constant feature 1.
pub fn gen_four_cycles(num_graphs: usize, nodes_per_graph: usize, seed: u64) -> Result<LabeledDataset> {
    let n = nodes_per_graph;
    if n < 10 || n % 2 != 0 {
        return Err(validation(format!(
            "nodes_per_graph must be even and at least 10, got {n}"
        )));
    }
    if num_graphs == 0 || num_graphs % 2 != 0 {
        return Err(validation(format!("num_graphs must be positive and even, got {num_graphs}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let with_square = cycle_union_edges(&[4, n - 4]);
    let without_square = cycle_union_edges(&[n / 2, n / 2]);
    let mut graphs = Vec::with_capacity(num_graphs);
    let mut labels = Vec::with_capacity(num_graphs);
    for idx in 0..num_graphs {
        let label = idx % 2;
        let base = if label == 1 { &with_square } else { &without_square };
        let perm = random_perm(n, &mut rng);
        graphs.push(Graph::from_edges(n, &permute_edges(base, &perm), StructureKind::Adjacency)?);
        labels.push(label);
    }
    LabeledDataset::new(FOUR_CYCLES_NAME, graphs, labels, 2, StructureKind::Adjacency)
}

/// Circulant graph on [`SKIP_CIRCLE_NODES`] nodes with ring edges and
/// chords of length `skip`.
pub fn skip_circle_edges(skip: usize) -> Vec<(usize, usize)> {
    let n = SKIP_CIRCLE_NODES;
    let mut edges = Vec::with_capacity(2 * n);
    for i in 0..n {
        edges.push((i, (i + 1) % n));
        edges.push((i, (i + skip) % n));
    }
    edges
}

/// Ten classes of circulant graphs, `copies_per_class` randomly relabeled
/// copies each. Class `c` uses skip length `SKIP_LENGTHS[c]`.
pub fn gen_skip_circles(copies_per_class: usize, seed: u64) -> Result<LabeledDataset> {
    if copies_per_class == 0 {
        return Err(validation("copies_per_class must be at least 1"));
    }
    let n = SKIP_CIRCLE_NODES;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bases: Vec<_> = SKIP_LENGTHS.iter().map(|&k| skip_circle_edges(k)).collect();
    let mut graphs = Vec::with_capacity(copies_per_class * bases.len());
    let mut labels = Vec::with_capacity(graphs.capacity());
    for _ in 0..copies_per_class {
        for (class, base) in bases.iter().enumerate() {
            let perm = random_perm(n, &mut rng);
            graphs.push(Graph::from_edges(n, &permute_edges(base, &perm), StructureKind::Adjacency)?);
            labels.push(class);
        }
    }
    LabeledDataset::new(SKIP_CIRCLES_NAME, graphs, labels, SKIP_LENGTHS.len(), StructureKind::Adjacency)
}

/// True when the graph has a simple cycle of length exactly 4.
pub fn has_four_cycle(g: &Graph) -> bool {
    let n = g.node_count();
    let adj = g.adjacency();
    // a 4-cycle exists iff two distinct nodes share at least two neighbours
    for a in 0..n {
        for b in (a + 1)..n {
            let common = (0..n).filter(|&k| adj[[a, k]] != 0.0 && adj[[b, k]] != 0.0).count();
            if common >= 2 {
                return true;
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_cycles_are_two_regular_and_balanced() {
        let ds = gen_four_cycles(40, 12, 7).unwrap();
        assert_eq!(ds.class_counts(), vec![20, 20]);
        for (g, &y) in ds.graphs.iter().zip(&ds.labels) {
            assert!((0..g.node_count()).all(|i| g.degree(i) == 2));
            assert_eq!(has_four_cycle(g), y == 1);
            assert!(g.features().iter().all(|&f| f == 1.0));
        }
    }

    #[test]
    fn four_cycles_rejects_bad_sizes() {
        assert!(gen_four_cycles(10, 8, 0).is_err());
        assert!(gen_four_cycles(10, 11, 0).is_err());
        assert!(gen_four_cycles(9, 12, 0).is_err());
    }

    #[test]
    fn skip_circles_degrees() {
        let ds = gen_skip_circles(2, 3).unwrap();
        assert_eq!(ds.class_count, 10);
        assert_eq!(ds.len(), 20);
        let g = &ds.graphs[0];
        assert_eq!(ds.labels[0], 0);
        assert!((0..SKIP_CIRCLE_NODES).all(|i| g.degree(i) == 4));
    }

    #[test]
    fn generators_are_seeded() {
        assert_eq!(gen_skip_circles(1, 5).unwrap(), gen_skip_circles(1, 5).unwrap());
        assert_ne!(gen_four_cycles(4, 10, 1).unwrap(), gen_four_cycles(4, 10, 2).unwrap());
    }
}
