//! Central finite-difference checks shared by the gradient tests and the
//! acceptance target.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::fmt;

use tfgw::fgw::{cg_linearized_gradient, fgw_cost};
use tfgw::nn::{cross_entropy, Gin, GinBatch, Mlp, Mode};
use tfgw::trainer::{batch_gradients, TfgwModel};
use tfgw::{solve_fgw, tfgw_backward, tfgw_forward, CgOptions, Graph, InitialCoupling, StructureKind, Template};

use super::{random_features, random_simplex, random_structure, rng};

/// Outcome bookkeeping for one gradient family.
#[derive(Clone, Debug)]
pub struct Tally {
    pub name: String,
    pub tol: f64,
    pub checked: usize,
    pub skipped: usize,
    pub failed: usize,
    pub worst: f64,
}

impl Tally {
    pub fn new(name: &str, tol: f64) -> Self {
        Tally {
            name: name.into(),
            tol,
            checked: 0,
            skipped: 0,
            failed: 0,
            worst: 0.0,
        }
    }

    pub fn passed(&self, min_points: usize) -> bool {
        self.failed == 0 && self.checked >= min_points
    }

    fn record(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::Skip => self.skipped += 1,
            Outcome::Err(e) => {
                self.checked += 1;
                self.worst = self.worst.max(e);
                if e > self.tol {
                    self.failed += 1;
                }
            }
        }
    }
}

impl fmt::Display for Tally {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} points, {} skipped, {} over {:.0e}, worst relative error {:.2e}",
            self.name, self.checked, self.skipped, self.failed, self.tol, self.worst
        )
    }
}

enum Outcome {
    Err(f64),
    Skip,
}

/// Compares `analytic` to the central difference of `f` at 0. Points where
/// the one-sided slopes disagree (a kink between the probes) or where `f`
/// declines to answer are skipped.
fn compare(f: &mut dyn FnMut(f64) -> Option<f64>, analytic: f64, h: f64) -> Outcome {
    let (Some(fp), Some(f0), Some(fm)) = (f(h), f(0.0), f(-h)) else {
        return Outcome::Skip;
    };
    let right = (fp - f0) / h;
    let left = (f0 - fm) / h;
    let scale = right.abs().max(left.abs());
    if (right - left).abs() > 0.05 * scale + 1e-6 {
        return Outcome::Skip;
    }
    let fd = (fp - fm) / (2.0 * h);
    Outcome::Err((fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6))
}

fn tight_cg() -> CgOptions {
    CgOptions {
        max_iterations: 20_000,
        relative_tolerance: 1e-15,
        ..CgOptions::default()
    }
}

/// Graph with continuous symmetric structure and random weights.
pub fn generic_graph(r: &mut ChaCha8Rng, n: usize, d: usize) -> Graph {
    Graph::new(random_structure(r, n), random_features(r, n, d), random_simplex(r, n)).unwrap()
}

pub fn generic_template(r: &mut ChaCha8Rng, m: usize, d: usize) -> Template {
    Template::new(random_structure(r, m), random_features(r, m, d), random_simplex(r, m)).unwrap()
}

/// Gradient of the fused cost with respect to the plan.
pub fn check_cg_gradient(points: usize, seed: u64) -> Tally {
    let mut t = Tally::new("cg_linearized_gradient", 1e-3);
    let mut r = rng(seed);
    for _ in 0..points {
        let n = r.random_range(2..=6);
        let m = r.random_range(2..=6);
        let c = random_structure(&mut r, n);
        let cb = random_structure(&mut r, m);
        let f = random_features(&mut r, n, 2);
        let fb = random_features(&mut r, m, 2);
        let alpha = r.random::<f64>();
        let plan = Array2::from_shape_fn((n, m), |_| r.random::<f64>() / (n * m) as f64);
        let g = cg_linearized_gradient(c.view(), f.view(), cb.view(), fb.view(), alpha, plan.view()).unwrap();
        let (i, k) = (r.random_range(0..n), r.random_range(0..m));
        let mut eval = |d: f64| {
            let mut p = plan.clone();
            p[[i, k]] += d;
            Some(fgw_cost(c.view(), f.view(), cb.view(), fb.view(), alpha, p.view()).unwrap().0)
        };
        t.record(compare(&mut eval, g[[i, k]], 1e-5));
    }
    t
}

/// Template structure, template features, alpha and input features of the
/// distance layer, at `points` entries each.
pub fn check_tfgw_backward(points: usize, seed: u64) -> [Tally; 4] {
    let mut tallies = [
        Tally::new("tfgw_backward dC̄", 1e-3),
        Tally::new("tfgw_backward dF̄", 1e-3),
        Tally::new("tfgw_backward dα", 1e-3),
        Tally::new("tfgw_backward dF", 1e-3),
    ];
    let mut r = rng(seed);
    let cg = tight_cg();
    let mut round = 0;
    while tallies.iter().any(|t| t.checked < points) && round < 20 * points {
        round += 1;
        let n = r.random_range(3..=6);
        let d = 2;
        let graph = generic_graph(&mut r, n, d);
        let templates: Vec<Template> = (0..2)
            .map(|_| {
                let m = r.random_range(3..=5);
                generic_template(&mut r, m, d)
            })
            .collect();
        let alpha = r.random_range(0.2..0.8);
        let w: Vec<f64> = (0..2).map(|_| r.random_range(-1.0..1.0)).collect();
        let record = tfgw_forward(graph.view(), &templates, alpha, &cg).unwrap();
        if record.converged.iter().any(|c| !c) {
            continue;
        }
        let grads = tfgw_backward(graph.view(), &templates, alpha, &record, &w).unwrap();

        // objective with every piece perturbable; probes warm-start at T*
        let value = |g: &Graph, tpls: &[Template], a: f64| -> Option<f64> {
            let mut total = 0.0;
            for (k, tpl) in tpls.iter().enumerate() {
                let opts = CgOptions {
                    initial: InitialCoupling::Provided(record.couplings[k].plan.clone()),
                    ..tight_cg()
                };
                let view = tfgw::AttributedView::new(tpl.structure.view(), tpl.features.view(), tpl.weights.view());
                let res = solve_fgw(g.view(), view, a, &opts).ok()?;
                let moved = (&res.coupling.plan - &record.couplings[k].plan).iter().map(|x| x.abs()).sum::<f64>();
                if !res.converged || moved > 1e-3 {
                    return None;
                }
                total += w[k] * res.value;
            }
            Some(total)
        };

        let k = r.random_range(0..2);
        let m = templates[k].node_count();
        if tallies[0].checked < points {
            let (a, b) = (r.random_range(0..m), r.random_range(0..m));
            if a != b {
                let analytic = grads.templates[k].structure[[a, b]] + grads.templates[k].structure[[b, a]];
                let mut eval = |dl: f64| {
                    let mut tp = templates.clone();
                    tp[k].structure[[a, b]] += dl;
                    tp[k].structure[[b, a]] += dl;
                    value(&graph, &tp, alpha)
                };
                tallies[0].record(compare(&mut eval, analytic, 1e-6));
            }
        }
        if tallies[1].checked < points {
            let (a, j) = (r.random_range(0..m), r.random_range(0..d));
            let analytic = grads.templates[k].features[[a, j]];
            let mut eval = |dl: f64| {
                let mut tp = templates.clone();
                tp[k].features[[a, j]] += dl;
                value(&graph, &tp, alpha)
            };
            tallies[1].record(compare(&mut eval, analytic, 1e-6));
        }
        if tallies[2].checked < points {
            let mut eval = |dl: f64| value(&graph, &templates, alpha + dl);
            tallies[2].record(compare(&mut eval, grads.alpha, 1e-6));
        }
        if tallies[3].checked < points {
            let (i, j) = (r.random_range(0..n), r.random_range(0..d));
            let analytic = grads.features[[i, j]];
            let mut eval = |dl: f64| {
                let mut f = graph.features().clone();
                f[[i, j]] += dl;
                value(&graph.with_features(f).ok()?, &templates, alpha)
            };
            tallies[3].record(compare(&mut eval, analytic, 1e-6));
        }
    }
    tallies
}

fn gin_slices(gin: &mut Gin) -> Vec<&mut [f64]> {
    gin.layers
        .iter_mut()
        .flat_map(|l| {
            [
                l.lin1.weight.as_slice_mut().unwrap(),
                l.lin1.bias.as_slice_mut().unwrap(),
                l.bn.gamma.as_slice_mut().unwrap(),
                l.bn.beta.as_slice_mut().unwrap(),
                l.lin2.weight.as_slice_mut().unwrap(),
                l.lin2.bias.as_slice_mut().unwrap(),
            ]
        })
        .collect()
}

fn gin_grad_slices(g: &tfgw::nn::GinGrads) -> Vec<Vec<f64>> {
    g.layers
        .iter()
        .flat_map(|l| {
            [
                l.lin1.weight.iter().copied().collect(),
                l.lin1.bias.to_vec(),
                l.bn.gamma.to_vec(),
                l.bn.beta.to_vec(),
                l.lin2.weight.iter().copied().collect(),
                l.lin2.bias.to_vec(),
            ]
        })
        .collect()
}

fn mlp_slices(m: &mut Mlp) -> Vec<&mut [f64]> {
    m.layers
        .iter_mut()
        .flat_map(|l| [l.weight.as_slice_mut().unwrap(), l.bias.as_slice_mut().unwrap()])
        .collect()
}

fn mlp_grad_slices(g: &tfgw::nn::MlpGrads) -> Vec<Vec<f64>> {
    g.layers
        .iter()
        .flat_map(|l| [l.weight.iter().copied().collect(), l.bias.to_vec()])
        .collect()
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a * b).sum()
}

/// GIN parameters and inputs, train-mode batch statistics.
pub fn check_gin(points: usize, seed: u64) -> Tally {
    let mut t = Tally::new("gin_backward", 1e-4);
    let mut r = rng(seed);
    let mut attempts = 0;
    while t.checked < points && attempts < 20 * points {
        attempts += 1;
        let graphs: Vec<Graph> = (0..2)
            .map(|_| {
                let n = r.random_range(3..=5);
                let adj = super::random_adjacency(&mut r, n, 0.6);
                Graph::from_adjacency(adj, random_features(&mut r, n, 3), StructureKind::Adjacency).unwrap()
            })
            .collect();
        let refs: Vec<&Graph> = graphs.iter().collect();
        let batch = GinBatch::new(&refs).unwrap();
        let mut gin = Gin::init(3, 4, 2, &mut r);
        let (out, cache) = gin.forward(&batch, Mode::Train).unwrap();
        let up = Array2::from_shape_fn(out.dim(), |_| r.random_range(-1.0..1.0));
        let (grads, dx) = gin.backward(&cache, &batch, up.view()).unwrap();
        let flat = gin_grad_slices(&grads);
        for _ in 0..5 {
            let group = r.random_range(0..=flat.len());
            if group == flat.len() {
                let (i, j) = (r.random_range(0..dx.nrows()), r.random_range(0..3));
                let mut eval = |d: f64| {
                    let mut b = batch.clone();
                    b.features[[i, j]] += d;
                    Some(dot(&gin.clone().forward(&b, Mode::Train).ok()?.0, &up))
                };
                t.record(compare(&mut eval, dx[[i, j]], 1e-5));
            } else {
                let idx = r.random_range(0..flat[group].len());
                let mut eval = |d: f64| {
                    let mut g2 = gin.clone();
                    gin_slices(&mut g2)[group][idx] += d;
                    Some(dot(&g2.forward(&batch, Mode::Train).ok()?.0, &up))
                };
                t.record(compare(&mut eval, flat[group][idx], 1e-5));
            }
        }
    }
    t
}

/// Classifier head with dropout active (masks held fixed).
pub fn check_mlp(points: usize, seed: u64) -> Tally {
    let mut t = Tally::new("mlp_backward", 1e-4);
    let mut r = rng(seed);
    let mut attempts = 0;
    while t.checked < points && attempts < 20 * points {
        attempts += 1;
        let dropout = [0.0, 0.2, 0.5][r.random_range(0..3)];
        let mlp = Mlp::init(5, 6, 3, dropout, &mut r).unwrap();
        let x = random_features(&mut r, 4, 5);
        let mask_seed: u64 = r.random();
        let (out, cache) = mlp.forward(x.view(), Mode::Train, &mut rng(mask_seed)).unwrap();
        let up = Array2::from_shape_fn(out.dim(), |_| r.random_range(-1.0..1.0));
        let (grads, dx) = mlp.backward(&cache, up.view()).unwrap();
        let flat = mlp_grad_slices(&grads);
        for _ in 0..5 {
            let group = r.random_range(0..=flat.len());
            if group == flat.len() {
                let (i, j) = (r.random_range(0..4), r.random_range(0..5));
                let mut eval = |d: f64| {
                    let mut x2 = x.clone();
                    x2[[i, j]] += d;
                    Some(dot(&mlp.forward(x2.view(), Mode::Train, &mut rng(mask_seed)).ok()?.0, &up))
                };
                t.record(compare(&mut eval, dx[[i, j]], 1e-5));
            } else {
                let idx = r.random_range(0..flat[group].len());
                let mut eval = |d: f64| {
                    let mut m2 = mlp.clone();
                    mlp_slices(&mut m2)[group][idx] += d;
                    Some(dot(&m2.forward(x.view(), Mode::Train, &mut rng(mask_seed)).ok()?.0, &up))
                };
                t.record(compare(&mut eval, flat[group][idx], 1e-5));
            }
        }
    }
    t
}

pub fn check_cross_entropy(points: usize, seed: u64) -> Tally {
    let mut t = Tally::new("cross_entropy", 1e-4);
    let mut r = rng(seed);
    for _ in 0..points {
        let c = r.random_range(2..=6);
        let logits: Array1<f64> = (0..c).map(|_| r.random_range(-3.0..3.0)).collect();
        let label = r.random_range(0..c);
        let (_, g) = cross_entropy(logits.view(), label).unwrap();
        let j = r.random_range(0..c);
        let mut eval = |d: f64| {
            let mut l = logits.clone();
            l[j] += d;
            Some(cross_entropy(l.view(), label).ok()?.0)
        };
        t.record(compare(&mut eval, g[j], 1e-5));
    }
    t
}

/// Tiny model: at most five nodes per graph, two templates, one GIN layer
/// of width four.
pub fn tiny_model(r: &mut ChaCha8Rng) -> (TfgwModel, Vec<Graph>, Vec<usize>) {
    let graphs: Vec<Graph> = (0..4)
        .map(|_| {
            let n = r.random_range(3..=5);
            generic_graph(r, n, 2)
        })
        .collect();
    let labels = vec![0, 1, 0, 1];
    let gin = Gin::init(2, 4, 1, r);
    let templates = (0..2)
        .map(|_| {
            let m = r.random_range(3..=4);
            generic_template(r, m, 4)
        })
        .collect();
    let model = TfgwModel {
        gin: Some(gin),
        templates,
        alpha: r.random_range(0.2..0.8),
        head: Mlp::init(2, 4, 2, 0.0, r).unwrap(),
        structure_kind: StructureKind::ShortestPath,
        cg: tight_cg(),
    };
    (model, graphs, labels)
}

/// Full loss of the tiny model against every parameter group except the
/// template weights.
pub fn check_end_to_end(points: usize, seed: u64) -> Tally {
    let mut t = Tally::new("end-to-end tiny model", 1e-3);
    let mut r = rng(seed);
    let mut attempts = 0;
    while t.checked < points && attempts < 20 * points {
        attempts += 1;
        let (model, graphs, labels) = tiny_model(&mut r);
        let refs: Vec<&Graph> = graphs.iter().collect();
        let loss = |m: &TfgwModel| -> Option<f64> {
            let mut m = m.clone();
            batch_gradients(&mut m, &refs, &labels, &mut rng(0)).ok().map(|p| p.loss)
        };
        let Ok(pass) = batch_gradients(&mut model.clone(), &refs, &labels, &mut rng(0)) else {
            continue;
        };
        let g = pass.grads;
        let gin_flat = gin_grad_slices(g.gin.as_ref().unwrap());
        let head_flat = mlp_grad_slices(&g.head);
        for _ in 0..4 {
            let (analytic, perturb): (f64, Box<dyn Fn(&mut TfgwModel, f64)>) = match r.random_range(0..5) {
                0 => {
                    let group = r.random_range(0..gin_flat.len());
                    let idx = r.random_range(0..gin_flat[group].len());
                    (
                        gin_flat[group][idx],
                        Box::new(move |m, d| gin_slices(m.gin.as_mut().unwrap())[group][idx] += d),
                    )
                }
                1 => {
                    let k = r.random_range(0..2);
                    let sz = model.templates[k].node_count();
                    let (a, b) = (r.random_range(0..sz), r.random_range(0..sz));
                    if a == b {
                        continue;
                    }
                    let s = &g.templates[k].structure;
                    (
                        s[[a, b]] + s[[b, a]],
                        Box::new(move |m, d| {
                            m.templates[k].structure[[a, b]] += d;
                            m.templates[k].structure[[b, a]] += d;
                        }),
                    )
                }
                2 => {
                    let k = r.random_range(0..2);
                    let a = r.random_range(0..model.templates[k].node_count());
                    let j = r.random_range(0..4);
                    (
                        g.templates[k].features[[a, j]],
                        Box::new(move |m, d| m.templates[k].features[[a, j]] += d),
                    )
                }
                3 => (g.alpha, Box::new(|m, d| m.alpha += d)),
                _ => {
                    let group = r.random_range(0..head_flat.len());
                    let idx = r.random_range(0..head_flat[group].len());
                    (
                        head_flat[group][idx],
                        Box::new(move |m, d| mlp_slices(&mut m.head)[group][idx] += d),
                    )
                }
            };
            let mut eval = |d: f64| {
                let mut m = model.clone();
                perturb(&mut m, d);
                loss(&m)
            };
            t.record(compare(&mut eval, analytic, 1e-6));
        }
    }
    t
}
