mod common;

use common::grad::{generic_graph, generic_template};
use common::*;
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::Rng;
use tfgw::{
    apply_constraints, simplex_project, solve_fgw, tfgw_backward, tfgw_forward, AttributedView, CgOptions, StructureKind,
    Template,
};

#[test]
fn template_equal_to_input_gives_zero() {
    let mut r = rng(1);
    let g = random_graph(&mut r, 6, 3, StructureKind::Adjacency);
    let t = Template::from_graph(&g);
    let rec = tfgw_forward(g.view(), &[t], 0.5, &CgOptions::default()).unwrap();
    assert!(rec.distances[0] <= 1e-12);
}

#[test]
fn vector_is_coordinatewise_solves() {
    let mut r = rng(2);
    let g = generic_graph(&mut r, 5, 2);
    let tpls = vec![generic_template(&mut r, 4, 2), generic_template(&mut r, 3, 2)];
    let opts = CgOptions::default();
    let rec = tfgw_forward(g.view(), &tpls, 0.4, &opts).unwrap();
    for (k, t) in tpls.iter().enumerate() {
        let v = AttributedView::new(t.structure.view(), t.features.view(), t.weights.view());
        assert_eq!(rec.distances[k], solve_fgw(g.view(), v, 0.4, &opts).unwrap().value);
        assert!(rec.couplings[k].marginal_error() <= 1e-9);
    }
}

#[test]
fn pruned_nodes_are_left_out() {
    let mut r = rng(3);
    let g = generic_graph(&mut r, 5, 2);
    let mut t = generic_template(&mut r, 4, 2);
    t.weights = array![0.5, 0.0, 0.5, 0.0];
    assert_eq!(t.active_indices(), vec![0, 2]);
    let rec = tfgw_forward(g.view(), std::slice::from_ref(&t), 0.5, &CgOptions::default()).unwrap();
    assert_eq!(rec.couplings[0].plan.dim(), (5, 2));
    let grads = tfgw_backward(g.view(), &[t], 0.5, &rec, &[1.0]).unwrap();
    let s = &grads.templates[0].structure;
    assert!(s.row(1).iter().chain(s.row(3).iter()).all(|&x| x == 0.0));

    let mut empty = generic_template(&mut r, 2, 2);
    empty.weights = Array1::zeros(2);
    assert!(tfgw_forward(g.view(), &[empty], 0.5, &CgOptions::default()).is_err());
}

#[test]
fn gradient_blocks_vanish_at_alpha_extremes() {
    let mut r = rng(4);
    let g = generic_graph(&mut r, 5, 2);
    let tpls = vec![generic_template(&mut r, 4, 2), generic_template(&mut r, 3, 2)];
    let opts = CgOptions::default();
    let rec = tfgw_forward(g.view(), &tpls, 1.0, &opts).unwrap();
    let grads = tfgw_backward(g.view(), &tpls, 1.0, &rec, &[0.7, -0.3]).unwrap();
    assert!(grads.features.iter().all(|&x| x == 0.0));
    assert!(grads.templates.iter().all(|t| t.features.iter().all(|&x| x == 0.0)));

    let rec = tfgw_forward(g.view(), &tpls, 0.0, &opts).unwrap();
    let grads = tfgw_backward(g.view(), &tpls, 0.0, &rec, &[0.7, -0.3]).unwrap();
    assert!(grads.templates.iter().all(|t| t.structure.iter().all(|&x| x == 0.0)));
}

#[test]
fn alpha_gradient_is_the_part_difference() {
    let mut r = rng(5);
    for _ in 0..20 {
        let g = generic_graph(&mut r, 4, 2);
        let tpls = vec![generic_template(&mut r, 3, 2), generic_template(&mut r, 5, 2)];
        let alpha = r.random::<f64>();
        let rec = tfgw_forward(g.view(), &tpls, alpha, &CgOptions::default()).unwrap();
        let w = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let grads = tfgw_backward(g.view(), &tpls, alpha, &rec, &w).unwrap();
        let expected: f64 = (0..2).map(|k| w[k] * (rec.parts[k].0 - rec.parts[k].1)).sum();
        assert_eq!(grads.alpha, expected);
        for t in &grads.templates {
            assert!((&t.structure - &t.structure.t()).iter().all(|x| x.abs() < 1e-12));
        }
    }
}

#[test]
fn lemma_one_on_random_graphs() {
    let mut r = rng(6);
    let tpls = vec![generic_template(&mut r, 4, 2), generic_template(&mut r, 6, 2)];
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = r.random_range(1..=8);
        let g = generic_graph(&mut r, n, 2);
        let p = random_perm(&mut r, n);
        let a = tfgw_forward(g.view(), &tpls, 0.5, &CgOptions::default()).unwrap();
        let b = tfgw_forward(g.permuted(&p).unwrap().view(), &tpls, 0.5, &CgOptions::default()).unwrap();
        worst = worst.max((&a.distances - &b.distances).iter().fold(0.0, |m, x| m.max(x.abs())));
    }
    assert!(worst <= 1e-6, "{worst}");
}

#[test]
fn simplex_examples() {
    assert_eq!(simplex_project(&[0.3, 0.3, 0.4]).unwrap(), vec![0.3, 0.3, 0.4]);
    assert_eq!(simplex_project(&[0.6, 0.6]).unwrap(), vec![0.5, 0.5]);
    assert_eq!(simplex_project(&[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);
    assert!(simplex_project(&[]).is_err());
    assert!(simplex_project(&[f64::NAN]).is_err());
}

#[test]
fn constraint_examples() {
    let mut t = Template {
        structure: array![[0.0, 0.2, 1.4], [0.6, 0.0, 0.5], [1.0, 0.5, 0.0]],
        features: Array2::zeros((3, 1)),
        weights: array![0.7, 0.5, -0.2],
    };
    let mut alpha = 1.3;
    apply_constraints(std::slice::from_mut(&mut t), &mut alpha, StructureKind::Adjacency);
    assert_eq!(alpha, 1.0);
    assert!((&t.structure - &t.structure.t()).iter().all(|x| x.abs() <= 1e-15));
    assert!(t.structure.iter().all(|&x| (0.0..=1.0).contains(&x)));
    assert!((t.weights[0] - 0.6).abs() < 1e-15 && (t.weights[1] - 0.4).abs() < 1e-15);
    assert_eq!(t.weights[2], 0.0);
    assert_eq!(t.active_indices(), vec![0, 1]);

    let mut alpha = -0.5;
    apply_constraints(&mut [], &mut alpha, StructureKind::ShortestPath);
    assert_eq!(alpha, 0.0);
}

/// Projection by exhaustive search: a fine grid narrows the region, then
/// the KKT conditions over every support pattern pick the exact point.
fn project_oracle(v: &[f64]) -> Vec<f64> {
    let m = v.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << m) {
        let support: Vec<usize> = (0..m).filter(|&i| mask & (1 << i) != 0).collect();
        let theta = (support.iter().map(|&i| v[i]).sum::<f64>() - 1.0) / support.len() as f64;
        let x: Vec<f64> = (0..m).map(|i| if mask & (1 << i) != 0 { v[i] - theta } else { 0.0 }).collect();
        // KKT: positive on the support, v_i <= theta off it
        let feasible = support.iter().all(|&i| x[i] >= 0.0) && (0..m).all(|i| mask & (1 << i) != 0 || v[i] <= theta + 1e-12);
        if feasible {
            let d: f64 = x.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, x));
            }
        }
    }
    let (d, x) = best.expect("some support satisfies KKT");
    // grid sanity check: no grid point of the simplex is closer
    let steps = 20;
    let grid_best = grid_min(v, steps);
    assert!(d <= grid_best + 1e-12);
    x
}

fn grid_min(v: &[f64], steps: usize) -> f64 {
    fn rec(v: &[f64], i: usize, left: usize, steps: usize, acc: f64) -> f64 {
        if i == v.len() - 1 {
            let x = left as f64 / steps as f64;
            return acc + (x - v[i]).powi(2);
        }
        (0..=left)
            .map(|k| rec(v, i + 1, left - k, steps, acc + (k as f64 / steps as f64 - v[i]).powi(2)))
            .fold(f64::INFINITY, f64::min)
    }
    rec(v, 0, steps, steps, 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn projection_matches_oracle(v in proptest::collection::vec(-2.0..2.0f64, 1..=4)) {
        let p = simplex_project(&v).unwrap();
        let o = project_oracle(&v);
        for (a, b) in p.iter().zip(&o) {
            prop_assert!((a - b).abs() <= 1e-9, "{:?} vs {:?}", p, o);
        }
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn constraints_are_idempotent(seed in any::<u64>(), m in 1usize..6, sp in any::<bool>(), alpha in -1.0..2.0f64) {
        let mut r = rng(seed);
        let kind = if sp { StructureKind::ShortestPath } else { StructureKind::Adjacency };
        let mut t = Template {
            structure: Array2::from_shape_fn((m, m), |_| r.random_range(-0.5..1.5)),
            features: random_features(&mut r, m, 2),
            weights: (0..m).map(|_| r.random_range(-0.5..1.0)).collect(),
        };
        let mut a = alpha;
        apply_constraints(std::slice::from_mut(&mut t), &mut a, kind);
        let (once, a1) = (t.clone(), a);
        apply_constraints(std::slice::from_mut(&mut t), &mut a, kind);
        prop_assert_eq!(&once.structure, &t.structure);
        prop_assert!((&once.weights - &t.weights).iter().all(|x| x.abs() <= 1e-15));
        prop_assert_eq!(once.active_indices(), t.active_indices());
        prop_assert_eq!(a1, a);
        prop_assert!((0.0..=1.0).contains(&a));
    }
}
