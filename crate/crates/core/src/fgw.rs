//! Fused Gromov-Wasserstein distance by conditional gradient.
//!
//! For a coupling `T ∈ U(h, h̄)` the cost splits into a structure part and a
//! feature part,
//!
//! ```text
//! E_GW(T) = <C² h, h> + <C̄² h̄, h̄> - 2 <Tᵀ C T, C̄>
//! E_W(T)  = <M, T>,      M_ik = |f_i - f̄_k|²
//! E(T)    = α E_GW(T) + (1 - α) E_W(T)
//! ```
//!
//! where squares are elementwise. Each iteration linearizes `E` at the
//! current plan, solves the resulting transport problem exactly and moves
//! along the segment with an exact line search (the cost is quadratic in the
//! step).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};

use crate::error::{dimension, validation, Error, Result};
use crate::graph::Graph;
use crate::ot::{check_marginal, solve_exact_ot, Coupling, TransportSolver, MARGINAL_TOL};

/// Borrowed `(C, F, h)` triple. Unlike [`Graph`] the structure may carry a
/// nonzero diagonal, which learned templates do.
#[derive(Clone, Copy, Debug)]
pub struct AttributedView<'a> {
    pub structure: ArrayView2<'a, f64>,
    pub features: ArrayView2<'a, f64>,
    pub weights: ArrayView1<'a, f64>,
}

impl<'a> AttributedView<'a> {
    pub fn new(
        structure: ArrayView2<'a, f64>,
        features: ArrayView2<'a, f64>,
        weights: ArrayView1<'a, f64>,
    ) -> Self {
        AttributedView {
            structure,
            features,
            weights,
        }
    }

    pub fn node_count(&self) -> usize {
        self.structure.nrows()
    }

    fn check(&self, side: &str) -> Result<()> {
        let n = self.structure.nrows();
        if self.structure.ncols() != n || self.features.nrows() != n || self.weights.len() != n {
            return Err(dimension(format!(
                "{side}: structure {:?}, features {:?}, weights {}",
                self.structure.dim(),
                self.features.dim(),
                self.weights.len()
            )));
        }
        if self.structure.iter().chain(self.features.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("{side} structure or features")));
        }
        Ok(())
    }
}

impl Graph {
    pub fn view(&self) -> AttributedView<'_> {
        AttributedView::new(self.structure().view(), self.features().view(), self.weights().view())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialCoupling {
    /// `h h̄ᵀ`
    Product,
    /// Warm start from a feasible plan.
    Provided(Array2<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgOptions {
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    pub initial: InitialCoupling,
    /// Number of starting points. Extra starts are anchored couplings
    /// (see [`anchored_start`]) and the lowest value is kept. They help on
    /// regular graphs, where the product coupling is stationary.
    pub starts: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            max_iterations: 1000,
            relative_tolerance: 1e-9,
            initial: InitialCoupling::Product,
            starts: 1,
        }
    }
}

impl CgOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(validation("max_iterations must be at least 1"));
        }
        if !(self.relative_tolerance > 0.0) {
            return Err(validation("relative_tolerance must be positive"));
        }
        if self.starts == 0 {
            return Err(validation("starts must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FgwResult {
    pub value: f64,
    pub coupling: Coupling,
    pub gw_part: f64,
    pub w_part: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after every accepted iteration, starting with the initial plan.
    pub trace: Vec<f64>,
}

/// Squared Euclidean distances between feature rows.
pub fn feature_cost(features: ArrayView2<'_, f64>, template_features: ArrayView2<'_, f64>) -> Array2<f64> {
    let sq = |f: ArrayView2<'_, f64>| -> Array1<f64> { f.rows().into_iter().map(|r| r.dot(&r)).collect() };
    let a = sq(features);
    let b = sq(template_features);
    let mut m = features.dot(&template_features.t());
    Zip::indexed(&mut m).for_each(|(i, k), v| {
        *v = (a[i] + b[k] - 2.0 * *v).max(0.0);
    });
    m
}

fn squared_matvec(c: ArrayView2<'_, f64>, h: ArrayView1<'_, f64>) -> Array1<f64> {
    c.rows().into_iter().map(|row| row.iter().zip(h).map(|(x, w)| x * x * w).sum()).collect()
}

fn frobenius(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, &x, &y| acc + x * y)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(validation(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

fn check_shapes(
    c: ArrayView2<'_, f64>,
    f: ArrayView2<'_, f64>,
    cb: ArrayView2<'_, f64>,
    fb: ArrayView2<'_, f64>,
    t: ArrayView2<'_, f64>,
) -> Result<()> {
    let (n, m) = t.dim();
    if c.dim() != (n, n) || cb.dim() != (m, m) || f.nrows() != n || fb.nrows() != m || f.ncols() != fb.ncols() {
        return Err(dimension(format!(
            "C {:?}, F {:?}, C̄ {:?}, F̄ {:?}, T {:?}",
            c.dim(),
            f.dim(),
            cb.dim(),
            fb.dim(),
            t.dim()
        )));
    }
    Ok(())
}

/// `(total, gw_part, w_part)` at a coupling, with the marginals read off `T`.
pub fn fgw_cost(
    c: ArrayView2<'_, f64>,
    f: ArrayView2<'_, f64>,
    cb: ArrayView2<'_, f64>,
    fb: ArrayView2<'_, f64>,
    alpha: f64,
    t: ArrayView2<'_, f64>,
) -> Result<(f64, f64, f64)> {
    check_shapes(c, f, cb, fb, t)?;
    let h = t.sum_axis(ndarray::Axis(1));
    let hb = t.sum_axis(ndarray::Axis(0));
    let m = feature_cost(f, fb);
    let ctc = c.dot(&t).dot(&cb);
    let gw = squared_matvec(c, h.view()).dot(&h) + squared_matvec(cb, hb.view()).dot(&hb) - 2.0 * frobenius(ctc.view(), t);
    let w = frobenius(m.view(), t);
    Ok((alpha * gw + (1.0 - alpha) * w, gw, w))
}

/// Direct quadruple sum of the fused cost. Test oracle for small problems.
pub fn fgw_cost_naive(
    c: ArrayView2<'_, f64>,
    f: ArrayView2<'_, f64>,
    cb: ArrayView2<'_, f64>,
    fb: ArrayView2<'_, f64>,
    alpha: f64,
    t: ArrayView2<'_, f64>,
) -> Result<f64> {
    check_shapes(c, f, cb, fb, t)?;
    let (n, m) = t.dim();
    if n * m > 64 {
        return Err(validation(format!("naive cost is capped at n·n̄ <= 64, got {}", n * m)));
    }
    let mut total = 0.0;
    for i in 0..n {
        for k in 0..m {
            let dist: f64 = f.row(i).iter().zip(fb.row(k)).map(|(a, b)| (a - b) * (a - b)).sum();
            for j in 0..n {
                for l in 0..m {
                    let ds = c[[i, j]] - cb[[k, l]];
                    total += (alpha * ds * ds + (1.0 - alpha) * dist) * t[[i, k]] * t[[j, l]];
                }
            }
        }
    }
    Ok(total)
}

/// Gradient of the fused cost with respect to the coupling.
pub fn cg_linearized_gradient(
    c: ArrayView2<'_, f64>,
    f: ArrayView2<'_, f64>,
    cb: ArrayView2<'_, f64>,
    fb: ArrayView2<'_, f64>,
    alpha: f64,
    t: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    check_shapes(c, f, cb, fb, t)?;
    let h = t.sum_axis(ndarray::Axis(1));
    let hb = t.sum_axis(ndarray::Axis(0));
    let p = Problem::new(c, cb, h.view(), hb.view(), feature_cost(f, fb), alpha);
    let ctc = c.dot(&t).dot(&cb);
    Ok(p.gradient(&ctc))
}

/// Quadratic `q(τ) = a τ² + b τ + c` of the cost along a direction, and its
/// minimizer on `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearch {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub tau: f64,
}

fn best_step(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        (-b / (2.0 * a)).clamp(0.0, 1.0)
    } else if a + b < 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Exact minimization of the cost on the segment `T + τ ΔT`, `τ ∈ [0, 1]`.
/// `ΔT` must have zero row and column sums.
pub fn exact_line_search(
    t: ArrayView2<'_, f64>,
    direction: ArrayView2<'_, f64>,
    c: ArrayView2<'_, f64>,
    cb: ArrayView2<'_, f64>,
    alpha: f64,
    feature_cost: ArrayView2<'_, f64>,
) -> Result<LineSearch> {
    let (n, m) = t.dim();
    if direction.dim() != (n, m) || feature_cost.dim() != (n, m) || c.dim() != (n, n) || cb.dim() != (m, m) {
        return Err(dimension("line search operands disagree in shape"));
    }
    let h = t.sum_axis(ndarray::Axis(1));
    let hb = t.sum_axis(ndarray::Axis(0));
    let ctc = c.dot(&t).dot(&cb);
    let cdc = c.dot(&direction).dot(&cb);
    let gw0 = squared_matvec(c, h.view()).dot(&h) + squared_matvec(cb, hb.view()).dot(&hb) - 2.0 * frobenius(ctc.view(), t);
    let q0 = alpha * gw0 + (1.0 - alpha) * frobenius(feature_cost, t);
    let (a, b) = quadratic_coefficients(alpha, &ctc, &cdc, direction, feature_cost);
    Ok(LineSearch {
        a,
        b,
        c: q0,
        tau: best_step(a, b),
    })
}

fn quadratic_coefficients(
    alpha: f64,
    ctc: &Array2<f64>,
    cdc: &Array2<f64>,
    direction: ArrayView2<'_, f64>,
    m: ArrayView2<'_, f64>,
) -> (f64, f64) {
    let a = -2.0 * alpha * frobenius(cdc.view(), direction);
    let b = -4.0 * alpha * frobenius(ctc.view(), direction) + (1.0 - alpha) * frobenius(m, direction);
    (a, b)
}

/// Fixed data of one FGW problem.
struct Problem<'a> {
    c: ArrayView2<'a, f64>,
    cb: ArrayView2<'a, f64>,
    h: ArrayView1<'a, f64>,
    hb: ArrayView1<'a, f64>,
    m: Array2<f64>,
    c2h: Array1<f64>,
    cb2hb: Array1<f64>,
    gw_const: f64,
    alpha: f64,
}

impl<'a> Problem<'a> {
    fn new(
        c: ArrayView2<'a, f64>,
        cb: ArrayView2<'a, f64>,
        h: ArrayView1<'a, f64>,
        hb: ArrayView1<'a, f64>,
        m: Array2<f64>,
        alpha: f64,
    ) -> Self {
        let c2h = squared_matvec(c, h);
        let cb2hb = squared_matvec(cb, hb);
        let gw_const = c2h.dot(&h) + cb2hb.dot(&hb);
        Problem {
            c,
            cb,
            h,
            hb,
            m,
            c2h,
            cb2hb,
            gw_const,
            alpha,
        }
    }

    fn gradient(&self, ctc: &Array2<f64>) -> Array2<f64> {
        let a = self.alpha;
        let mut g = Array2::zeros(ctc.raw_dim());
        Zip::indexed(&mut g).and(ctc).and(&self.m).for_each(|(i, k), g, &x, &mk| {
            *g = 2.0 * a * (self.c2h[i] + self.cb2hb[k] - 2.0 * x) + (1.0 - a) * mk;
        });
        g
    }

    fn parts(&self, t: ArrayView2<'_, f64>, ctc: &Array2<f64>) -> (f64, f64) {
        let gw = self.gw_const - 2.0 * frobenius(ctc.view(), t);
        let w = frobenius(self.m.view(), t);
        (gw, w)
    }

    fn cost(&self, t: ArrayView2<'_, f64>, ctc: &Array2<f64>) -> f64 {
        let (gw, w) = self.parts(t, ctc);
        self.alpha * gw + (1.0 - self.alpha) * w
    }

    fn run(&self, init: Array2<f64>, opts: &CgOptions) -> Result<FgwResult> {
        let h = self.h.as_slice().map(<[f64]>::to_vec).unwrap_or_else(|| self.h.to_vec());
        let hb = self.hb.as_slice().map(<[f64]>::to_vec).unwrap_or_else(|| self.hb.to_vec());
        let mut t = init;
        let mut ctc = self.c.dot(&t).dot(&self.cb);
        let mut cost = self.cost(t.view(), &ctc);
        let mut trace = vec![cost];
        let mut converged = false;
        let mut iterations = 0;
        let mut lp = TransportSolver::new(&h, &hb)?;
        for it in 1..=opts.max_iterations {
            iterations = it;
            let grad = self.gradient(&ctc);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite("FGW gradient".into()));
            }
            let vertex = lp.solve(grad.view())?.coupling.plan;
            let direction = vertex - &t;
            let cdc = self.c.dot(&direction).dot(&self.cb);
            let (a, b) = quadratic_coefficients(self.alpha, &ctc, &cdc, direction.view(), self.m.view());
            let tau = best_step(a, b);
            if tau <= 0.0 {
                converged = true;
                break;
            }
            let next_t = &t + &(tau * &direction);
            let next_ctc = &ctc + &(tau * &cdc);
            let next_cost = self.cost(next_t.view(), &next_ctc);
            if !(next_cost <= cost) {
                // rounding noise at a stationary point
                converged = true;
                break;
            }
            let decrease = cost - next_cost;
            t = next_t;
            ctc = next_ctc;
            cost = next_cost;
            trace.push(cost);
            if decrease <= opts.relative_tolerance * cost.abs() || cost.abs() < 1e-300 {
                converged = true;
                break;
            }
        }
        // exact evaluation at the final plan
        let ctc = self.c.dot(&t).dot(&self.cb);
        let (gw, w) = self.parts(t.view(), &ctc);
        let (gw, w) = (gw.max(0.0), w.max(0.0));
        Ok(FgwResult {
            value: self.alpha * gw + (1.0 - self.alpha) * w,
            coupling: Coupling {
                plan: t,
                source: h,
                target: hb,
            },
            gw_part: gw,
            w_part: w,
            iterations,
            converged,
            trace,
        })
    }
}

/// Values at or below this are treated as an exact match.
const ZERO_VALUE: f64 = 1e-14;

/// Longest walk length used by [`anchored_start`].
const PROFILE_DEPTH: usize = 48;

/// Walk-count profiles `(Cᵖ e_a)_i`, `p = 1..depth`, each column scaled by
/// its `h`-weighted mean.
fn walk_profile(c: ArrayView2<'_, f64>, h: ArrayView1<'_, f64>, anchor: usize, depth: usize) -> Array2<f64> {
    let n = c.nrows();
    let mut out = Array2::zeros((n, depth));
    let mut v = Array1::zeros(n);
    v[anchor] = 1.0;
    for p in 0..depth {
        v = c.dot(&v);
        let mean = v.dot(&h);
        if mean.abs() > 0.0 {
            v /= mean;
        }
        out.column_mut(p).assign(&v);
    }
    out
}

fn strongest_neighbors(c: ArrayView2<'_, f64>, i: usize) -> Vec<usize> {
    let mut nb: Vec<usize> = (0..c.nrows()).filter(|&j| j != i && c[[i, j]] > 0.0).collect();
    nb.sort_by(|&a, &b| c[[i, b]].total_cmp(&c[[i, a]]).then(a.cmp(&b)));
    nb
}

fn heaviest(h: ArrayView1<'_, f64>) -> usize {
    (0..h.len()).fold(0, |best, i| if h[i] > h[best] { i } else { best })
}

/// Deterministic symmetry-breaking start number `s` (0-based).
///
/// The heaviest source node `i0` and its `s`-th strongest neighbour `i1` are
/// paired with the heaviest target node `k0` and its strongest neighbour
/// `k1`. Every node is described by its walk counts from the two anchors,
/// and the start is the exact transport plan between these descriptions.
pub fn anchored_start(
    c: ArrayView2<'_, f64>,
    cb: ArrayView2<'_, f64>,
    h: ArrayView1<'_, f64>,
    hb: ArrayView1<'_, f64>,
    s: usize,
) -> Result<Array2<f64>> {
    let i0 = heaviest(h);
    let k0 = heaviest(hb);
    let src_nb = strongest_neighbors(c, i0);
    let tgt_nb = strongest_neighbors(cb, k0);
    let depth = c.nrows().max(cb.nrows()).min(PROFILE_DEPTH);
    let mut p = walk_profile(c, h, i0, depth);
    let mut pb = walk_profile(cb, hb, k0, depth);
    if let (false, Some(&k1)) = (src_nb.is_empty(), tgt_nb.first()) {
        let i1 = src_nb[s % src_nb.len()];
        let views = |a: &Array2<f64>, b: Array2<f64>| ndarray::concatenate(ndarray::Axis(1), &[a.view(), b.view()]);
        p = views(&p, walk_profile(c, h, i1, depth)).expect("same row count");
        pb = views(&pb, walk_profile(cb, hb, k1, depth)).expect("same row count");
    }
    let cost = feature_cost(p.view(), pb.view());
    Ok(solve_exact_ot(cost.view(), &h.to_vec(), &hb.to_vec())?.coupling.plan)
}

/// FGW distance between an input graph and a template, from a local
/// optimum of the conditional-gradient iteration.
pub fn solve_fgw(
    source: AttributedView<'_>,
    target: AttributedView<'_>,
    alpha: f64,
    options: &CgOptions,
) -> Result<FgwResult> {
    check_alpha(alpha)?;
    options.validate()?;
    source.check("graph")?;
    target.check("template")?;
    if source.features.ncols() != target.features.ncols() {
        return Err(dimension(format!(
            "feature dimensions differ: {} vs {}",
            source.features.ncols(),
            target.features.ncols()
        )));
    }
    let h = source.weights.to_vec();
    let hb = target.weights.to_vec();
    check_marginal("graph weights", &h)?;
    check_marginal("template weights", &hb)?;
    let problem = Problem::new(
        source.structure,
        target.structure,
        source.weights,
        target.weights,
        feature_cost(source.features, target.features),
        alpha,
    );
    let first = match &options.initial {
        InitialCoupling::Product => Coupling::product(&h, &hb).plan,
        InitialCoupling::Provided(plan) => {
            let cp = Coupling {
                plan: plan.clone(),
                source: h.clone(),
                target: hb.clone(),
            };
            if plan.dim() != (h.len(), hb.len()) {
                return Err(dimension("provided coupling has the wrong shape"));
            }
            if plan.iter().any(|&x| !(x >= 0.0)) || cp.marginal_error() > MARGINAL_TOL {
                return Err(validation("provided coupling is not in U(h, h̄)"));
            }
            cp.plan
        }
    };
    let mut best = problem.run(first.clone(), options)?;
    for start in 1..options.starts {
        if best.value <= ZERO_VALUE {
            // distances are nonnegative
            break;
        }
        let init = anchored_start(source.structure, target.structure, source.weights, target.weights, start - 1)?;
        let candidate = problem.run(init, options)?;
        if candidate.value < best.value {
            best = candidate;
        }
    }
    Ok(best)
}
