#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

use tfgw::fgw::{cg_linearized_gradient, exact_line_search, feature_cost};
use tfgw::{Coupling, Graph, StructureKind};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    let raw: Array1<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
    let s = raw.sum();
    raw / s
}

pub fn random_features(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0)
}

pub fn random_adjacency(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Array2<f64> {
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                a[[i, j]] = 1.0;
                a[[j, i]] = 1.0;
            }
        }
    }
    a
}

/// Symmetric nonnegative matrix with zero diagonal.
pub fn random_structure(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let mut c = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = rng.random::<f64>();
            c[[i, j]] = v;
            c[[j, i]] = v;
        }
    }
    c
}

/// Erdős–Rényi graph with random features and random node weights.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, d: usize, kind: StructureKind) -> Graph {
    let adj = random_adjacency(rng, n, 0.4);
    let g = Graph::from_adjacency(adj, random_features(rng, n, d), kind).unwrap();
    let w = random_simplex(rng, n);
    Graph::new(g.structure().clone(), g.features().clone(), w).unwrap()
}

pub fn random_perm(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Minimum over repetitions of the time of one gradient plus line-search
/// step, in seconds.
pub fn step_time(n: usize, m: usize, reps: usize) -> f64 {
    let mut r = rng(10);
    let (c, cb) = (random_structure(&mut r, n), random_structure(&mut r, m));
    let (f, fb) = (random_features(&mut r, n, 4), random_features(&mut r, m, 4));
    let h = vec![1.0 / n as f64; n];
    let hb = vec![1.0 / m as f64; m];
    let t = Coupling::product(&h, &hb).plan;
    let mcost = feature_cost(f.view(), fb.view());
    let mut best = f64::INFINITY;
    for _ in 0..reps {
        let start = Instant::now();
        let g = cg_linearized_gradient(c.view(), f.view(), cb.view(), fb.view(), 0.5, t.view()).unwrap();
        let d = &g - &t;
        let ls = exact_line_search(t.view(), d.view(), c.view(), cb.view(), 0.5, mcost.view()).unwrap();
        std::hint::black_box(ls);
        best = best.min(start.elapsed().as_secs_f64());
    }
    best
}

pub mod grad;
