//! Distance embedding to a list of learnable templates, with gradients
//! taken at the optimal couplings held fixed.

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;

use crate::error::{dimension, validation, Error, Result};
use crate::fgw::{solve_fgw, AttributedView, CgOptions};
use crate::graph::{check_simplex, Graph, StructureKind};
use crate::ot::Coupling;

/// A learnable `(C̄, F̄, h̄)` triple. Nodes whose weight is exactly zero are
/// pruned: they stay in the arrays but take no part in any solve.
#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    pub structure: Array2<f64>,
    pub features: Array2<f64>,
    pub weights: Array1<f64>,
}

impl Template {
    pub fn new(structure: Array2<f64>, features: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        let t = Template {
            structure,
            features,
            weights,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn from_graph(graph: &Graph) -> Self {
        Template {
            structure: graph.structure().clone(),
            features: graph.features().clone(),
            weights: graph.weights().clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.weights.len();
        if self.structure.dim() != (n, n) || self.features.nrows() != n {
            return Err(dimension(format!(
                "template structure {:?}, features {:?}, weights {}",
                self.structure.dim(),
                self.features.dim(),
                n
            )));
        }
        if self.structure.iter().chain(self.features.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("template parameters".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if self.structure[[i, j]] != self.structure[[j, i]] {
                    return Err(validation(format!("template structure is not symmetric at ({i}, {j})")));
                }
            }
        }
        if self.structure.iter().any(|&x| x < 0.0) {
            return Err(validation("template structure has negative entries"));
        }
        check_simplex(&self.weights.to_vec(), 1e-9)?;
        Ok(())
    }

    /// Allocated node count, including pruned nodes.
    pub fn node_count(&self) -> usize {
        self.weights.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.weights.len()).filter(|&k| self.weights[k] != 0.0).collect()
    }

    pub fn active_size(&self) -> usize {
        self.weights.iter().filter(|&&w| w != 0.0).count()
    }

    /// Owned copy restricted to the active nodes.
    pub fn active(&self) -> ActiveTemplate {
        let idx = self.active_indices();
        ActiveTemplate {
            structure: self.structure.select(Axis(0), &idx).select(Axis(1), &idx),
            features: self.features.select(Axis(0), &idx),
            weights: self.weights.select(Axis(0), &idx),
            indices: idx,
        }
    }
}

/// Active sub-template together with the original node indices.
#[derive(Clone, Debug)]
pub struct ActiveTemplate {
    pub structure: Array2<f64>,
    pub features: Array2<f64>,
    pub weights: Array1<f64>,
    pub indices: Vec<usize>,
}

impl ActiveTemplate {
    pub fn view(&self) -> AttributedView<'_> {
        AttributedView::new(self.structure.view(), self.features.view(), self.weights.view())
    }
}

/// Output of [`tfgw_forward`], kept for the backward pass.
#[derive(Clone, Debug)]
pub struct TfgwRecord {
    pub distances: Array1<f64>,
    /// Optimal couplings on the active template nodes.
    pub couplings: Vec<Coupling>,
    /// `(gw_part, w_part)` per template.
    pub parts: Vec<(f64, f64)>,
    /// Active node indices each coupling refers to.
    pub active: Vec<Vec<usize>>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemplateGrad {
    pub structure: Array2<f64>,
    pub features: Array2<f64>,
    pub weights: Array1<f64>,
}

impl TemplateGrad {
    pub fn zeros_like(t: &Template) -> Self {
        TemplateGrad {
            structure: Array2::zeros(t.structure.raw_dim()),
            features: Array2::zeros(t.features.raw_dim()),
            weights: Array1::zeros(t.weights.raw_dim()),
        }
    }

    pub fn add_assign(&mut self, other: &TemplateGrad) {
        self.structure += &other.structure;
        self.features += &other.features;
        self.weights += &other.weights;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TfgwGrads {
    pub templates: Vec<TemplateGrad>,
    pub alpha: f64,
    /// Gradient with respect to the input node features.
    pub features: Array2<f64>,
}

fn check_inputs(graph: &AttributedView<'_>, templates: &[Template], alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(validation(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if templates.is_empty() {
        return Err(validation("at least one template is required"));
    }
    let d = graph.features.ncols();
    for (k, t) in templates.iter().enumerate() {
        if t.feature_dim() != d {
            return Err(dimension(format!(
                "template {k} has feature dimension {}, graph has {d}",
                t.feature_dim()
            )));
        }
        if t.active_size() == 0 {
            return Err(validation(format!("template {k} has no active nodes")));
        }
    }
    Ok(())
}

/// Vector of FGW distances from `graph` to every template.
pub fn tfgw_forward(
    graph: AttributedView<'_>,
    templates: &[Template],
    alpha: f64,
    options: &CgOptions,
) -> Result<TfgwRecord> {
    check_inputs(&graph, templates, alpha)?;
    let solved: Vec<_> = templates
        .par_iter()
        .map(|t| {
            let active = t.active();
            solve_fgw(graph, active.view(), alpha, options).map(|r| (r, active.indices))
        })
        .collect::<Result<_>>()?;
    let k = solved.len();
    let mut record = TfgwRecord {
        distances: Array1::zeros(k),
        couplings: Vec::with_capacity(k),
        parts: Vec::with_capacity(k),
        active: Vec::with_capacity(k),
        iterations: Vec::with_capacity(k),
        converged: Vec::with_capacity(k),
    };
    for (i, (r, idx)) in solved.into_iter().enumerate() {
        record.distances[i] = r.value;
        record.parts.push((r.gw_part, r.w_part));
        record.couplings.push(r.coupling);
        record.active.push(idx);
        record.iterations.push(r.iterations);
        record.converged.push(r.converged);
    }
    Ok(record)
}

/// Gradients of `Σ_k upstream[k] · distances[k]` with every optimal coupling
/// held fixed.
pub fn tfgw_backward(
    graph: AttributedView<'_>,
    templates: &[Template],
    alpha: f64,
    record: &TfgwRecord,
    upstream: &[f64],
) -> Result<TfgwGrads> {
    check_inputs(&graph, templates, alpha)?;
    let k = templates.len();
    if upstream.len() != k || record.couplings.len() != k || record.active.len() != k {
        return Err(dimension(format!(
            "{k} templates, {} upstream values, {} recorded couplings",
            upstream.len(),
            record.couplings.len()
        )));
    }
    let n = graph.node_count();
    let c = graph.structure;
    let f = graph.features;
    let h = graph.weights;
    let hf = &f * &h.insert_axis(Axis(1));

    let per_template: Vec<(TemplateGrad, f64, Array2<f64>)> = templates
        .par_iter()
        .zip(record.couplings.par_iter())
        .zip(record.active.par_iter())
        .zip(record.parts.par_iter())
        .zip(upstream.par_iter())
        .map(|((((tpl, cp), idx), &(gw, wp)), &w)| {
            let t = &cp.plan;
            if t.dim() != (n, idx.len()) || idx.iter().any(|&i| i >= tpl.node_count()) {
                return Err(dimension("stale forward record: coupling shape does not match inputs"));
            }
            let cb = tpl.structure.select(Axis(0), idx).select(Axis(1), idx);
            let fb = tpl.features.select(Axis(0), idx);
            let hb = tpl.weights.select(Axis(0), idx);

            let mut grad = TemplateGrad::zeros_like(tpl);
            let mut df = Array2::zeros(f.raw_dim());
            if w != 0.0 {
                let tct = t.t().dot(&c).dot(t);
                let tf = t.t().dot(&f);
                let tfb = t.dot(&fb);
                let cb2hb: Array1<f64> = cb
                    .rows()
                    .into_iter()
                    .map(|r| r.iter().zip(&hb).map(|(x, y)| x * x * y).sum())
                    .collect();
                for (a, &ia) in idx.iter().enumerate() {
                    for (b, &ib) in idx.iter().enumerate() {
                        grad.structure[[ia, ib]] = w * 2.0 * alpha * (cb[[a, b]] * hb[a] * hb[b] - tct[[a, b]]);
                    }
                    let sq: f64 = fb.row(a).iter().map(|x| x * x).sum();
                    grad.weights[ia] = w * (2.0 * alpha * cb2hb[a] + (1.0 - alpha) * sq);
                    for d in 0..fb.ncols() {
                        grad.features[[ia, d]] = w * 2.0 * (1.0 - alpha) * (hb[a] * fb[[a, d]] - tf[[a, d]]);
                    }
                }
                df = (w * 2.0 * (1.0 - alpha)) * (&hf - &tfb);
            }
            Ok((grad, w * (gw - wp), df))
        })
        .collect::<Result<_>>()?;

    // ordered reduction
    let mut grads = TfgwGrads {
        templates: Vec::with_capacity(k),
        alpha: 0.0,
        features: Array2::zeros(f.raw_dim()),
    };
    for (g, da, df) in per_template {
        grads.templates.push(g);
        grads.alpha += da;
        grads.features += &df;
    }
    Ok(grads)
}

/// Euclidean projection onto the probability simplex.
pub fn simplex_project(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(validation("cannot project an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("simplex projection input".into()));
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    Ok(v.iter().map(|&x| (x - theta).max(0.0)).collect())
}

/// Projects parameters back onto their feasible sets after a gradient step.
///
/// Structures are symmetrized and clamped to `[0, 1]` for adjacency inputs or
/// to nonnegative values otherwise. Weights are projected onto the simplex
/// over the active nodes; nodes that reach zero are pruned for good.
pub fn apply_constraints(templates: &mut [Template], alpha: &mut f64, kind: StructureKind) {
    for t in templates.iter_mut() {
        let sym = (&t.structure + &t.structure.t()) * 0.5;
        t.structure = match kind {
            StructureKind::Adjacency => sym.mapv(|x| x.clamp(0.0, 1.0)),
            StructureKind::ShortestPath => sym.mapv(|x| x.max(0.0)),
        };
        let idx = t.active_indices();
        if idx.is_empty() {
            continue;
        }
        let active: Vec<f64> = idx.iter().map(|&i| t.weights[i]).collect();
        if let Ok(p) = simplex_project(&active) {
            for (&i, &x) in idx.iter().zip(&p) {
                t.weights[i] = x;
            }
        }
    }
    *alpha = if alpha.is_nan() { 0.5 } else { alpha.clamp(0.0, 1.0) };
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn projection_examples() {
        let p = simplex_project(&[0.3, 0.3, 0.4]).unwrap();
        assert!(p.iter().zip([0.3, 0.3, 0.4]).all(|(a, b)| (a - b).abs() < 1e-15));
        assert_eq!(simplex_project(&[0.6, 0.6]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(simplex_project(&[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert!(simplex_project(&[]).is_err());
        assert!(simplex_project(&[f64::NAN]).is_err());
    }

    #[test]
    fn constraints_prune_and_clamp() {
        let mut t = vec![Template {
            structure: array![[0.0, 1.2, 0.3], [0.1, 0.0, -0.5], [0.3, 0.5, 0.0]],
            features: Array2::ones((3, 1)),
            weights: array![0.7, 0.5, -0.2],
        }];
        let mut alpha = 1.3;
        apply_constraints(&mut t, &mut alpha, StructureKind::Adjacency);
        assert_eq!(alpha, 1.0);
        let w = &t[0].weights;
        assert!((w[0] - 0.6).abs() < 1e-15 && (w[1] - 0.4).abs() < 1e-15 && w[2] == 0.0);
        assert_eq!(t[0].active_indices(), vec![0, 1]);
        let s = &t[0].structure;
        assert_eq!(s, &s.t());
        assert_eq!(s[[0, 1]], 0.65);
        assert_eq!(s[[1, 2]], 0.0);
        let before = t.clone();
        apply_constraints(&mut t, &mut alpha, StructureKind::Adjacency);
        assert_eq!(before, t);
    }

    #[test]
    fn pruned_nodes_do_not_regrow() {
        let mut t = vec![Template {
            structure: Array2::zeros((2, 2)),
            features: Array2::zeros((2, 1)),
            weights: array![1.0, 0.0],
        }];
        t[0].weights[1] = 0.0;
        t[0].weights[0] = 0.2;
        let mut alpha = 0.5;
        apply_constraints(&mut t, &mut alpha, StructureKind::ShortestPath);
        assert_eq!(t[0].weights, array![1.0, 0.0]);
    }

    #[test]
    fn forward_self_distance_and_errors() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)], StructureKind::Adjacency).unwrap();
        let tpl = vec![Template::from_graph(&g)];
        let rec = tfgw_forward(g.view(), &tpl, 0.5, &CgOptions::default()).unwrap();
        assert!(rec.distances[0].abs() < 1e-12);
        assert!(tfgw_forward(g.view(), &tpl, 1.5, &CgOptions::default()).is_err());
        let mut empty = tpl.clone();
        empty[0].weights.fill(0.0);
        assert!(tfgw_forward(g.view(), &empty, 0.5, &CgOptions::default()).is_err());
        let wide = vec![Template {
            features: Array2::ones((4, 2)),
            ..tpl[0].clone()
        }];
        assert!(matches!(
            tfgw_forward(g.view(), &wide, 0.5, &CgOptions::default()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn backward_rejects_stale_record() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)], StructureKind::Adjacency).unwrap();
        let tpl = vec![Template::from_graph(&g)];
        let rec = tfgw_forward(g.view(), &tpl, 0.5, &CgOptions::default()).unwrap();
        let bigger = Graph::from_edges(4, &[(0, 1), (1, 2)], StructureKind::Adjacency).unwrap();
        assert!(tfgw_backward(bigger.view(), &tpl, 0.5, &rec, &[1.0]).is_err());
        assert!(tfgw_backward(g.view(), &tpl, 0.5, &rec, &[1.0, 2.0]).is_err());
    }
}
