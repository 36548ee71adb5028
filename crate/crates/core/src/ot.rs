//! Exact linear optimal transport between two discrete distributions.
//!
//! [`solve_exact_ot`] runs a transportation simplex (network simplex on the
//! complete bipartite graph). The basis is a spanning tree of `n + m - 1`
//! cells. The entering cell has the most negative reduced cost and
//! degeneracy is avoided by perturbing the supplies with a small `ε`,
//! and the reported plan is recomputed on the optimal basis with the
//! unperturbed marginals.

use ndarray::{Array2, ArrayView2};

use crate::error::{dimension, validation, Error, Result};

/// Marginal mass tolerance accepted on input and guaranteed on output.
pub const MARGINAL_TOL: f64 = 1e-9;

/// Plan entries below this magnitude are reported as exact zeros.
pub const CLEAN_TOL: f64 = 1e-15;

/// A transport plan together with the marginals it couples.
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling {
    pub plan: Array2<f64>,
    pub source: Vec<f64>,
    pub target: Vec<f64>,
}

impl Coupling {
    /// Independent coupling `h h̄ᵀ`.
    pub fn product(source: &[f64], target: &[f64]) -> Self {
        let plan = Array2::from_shape_fn((source.len(), target.len()), |(i, k)| source[i] * target[k]);
        Coupling {
            plan,
            source: source.to_vec(),
            target: target.to_vec(),
        }
    }

    /// Largest absolute deviation of the row/column sums from the marginals.
    pub fn marginal_error(&self) -> f64 {
        let rows = self
            .plan
            .rows()
            .into_iter()
            .zip(&self.source)
            .map(|(r, &h)| (r.sum() - h).abs());
        let cols = self
            .plan
            .columns()
            .into_iter()
            .zip(&self.target)
            .map(|(c, &h)| (c.sum() - h).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }

    pub fn support_size(&self) -> usize {
        self.plan.iter().filter(|&&t| t > 0.0).count()
    }

    /// Row-major indices of the strictly positive entries.
    pub fn support(&self) -> Vec<usize> {
        self.plan
            .iter()
            .enumerate()
            .filter(|(_, &t)| t > 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct OtSolution {
    pub coupling: Coupling,
    pub objective: f64,
    pub pivots: usize,
    /// Some basic cell carries zero mass.
    pub degenerate: bool,
    /// Every non-basic reduced cost is strictly positive, so the optimal
    /// plan is unique.
    pub unique: bool,
}

pub(crate) fn check_marginal(name: &str, w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(validation(format!("{name} marginal is empty")));
    }
    if w.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(validation(format!("{name} marginal has negative or non-finite entries")));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > MARGINAL_TOL {
        return Err(validation(format!("{name} marginal sums to {s}, expected 1")));
    }
    Ok(())
}

fn normalized(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter().map(|&x| x / s).collect()
}

/// Spanning-tree basis of the transportation polytope.
struct Basis {
    n: usize,
    m: usize,
    /// cells incident to each tree node (rows `0..n`, columns `n..n+m`)
    incident: Vec<Vec<usize>>,
    is_basic: Vec<bool>,
    flow: Vec<f64>,
    // scratch for potentials and the tree traversal
    u: Vec<f64>,
    v: Vec<f64>,
    parent_cell: Vec<usize>,
    depth: Vec<usize>,
    order: Vec<usize>,
}

impl Basis {
    fn row_node(i: usize) -> usize {
        i
    }

    fn col_node(&self, j: usize) -> usize {
        self.n + j
    }

    fn other_end(&self, cell: usize, node: usize) -> usize {
        let (i, j) = (cell / self.m, cell % self.m);
        if node < self.n {
            debug_assert_eq!(node, i);
            self.n + j
        } else {
            debug_assert_eq!(node, self.n + j);
            i
        }
    }

    /// North-west corner start on the (perturbed) marginals.
    fn north_west(n: usize, m: usize, supply: &[f64], demand: &[f64]) -> Basis {
        let mut b = Basis {
            n,
            m,
            incident: vec![Vec::new(); n + m],
            is_basic: vec![false; n * m],
            flow: vec![0.0; n * m],
            u: vec![0.0; n],
            v: vec![0.0; m],
            parent_cell: vec![usize::MAX; n + m],
            depth: vec![0; n + m],
            order: Vec::with_capacity(n + m),
        };
        let mut ra = supply.to_vec();
        let mut rb = demand.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let f = ra[i].min(rb[j]).max(0.0);
            let cell = i * m + j;
            b.add_cell(cell);
            b.flow[cell] = f;
            ra[i] -= f;
            rb[j] -= f;
            if i == n - 1 && j == m - 1 {
                break;
            }
            if j == m - 1 || (i < n - 1 && ra[i] <= rb[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        b
    }

    fn add_cell(&mut self, cell: usize) {
        let (i, j) = (cell / self.m, cell % self.m);
        self.is_basic[cell] = true;
        self.incident[Self::row_node(i)].push(cell);
        let cn = self.col_node(j);
        self.incident[cn].push(cell);
    }

    fn remove_cell(&mut self, cell: usize) {
        let (i, j) = (cell / self.m, cell % self.m);
        self.is_basic[cell] = false;
        self.incident[i].retain(|&c| c != cell);
        let cn = self.col_node(j);
        self.incident[cn].retain(|&c| c != cell);
    }

    /// Dual potentials `u_i + v_j = c_ij` on basic cells, rooted at row 0.
    /// Also fills parent pointers and depths for cycle search.
    fn compute_potentials(&mut self, cost: &[f64]) {
        let total = self.n + self.m;
        self.order.clear();
        self.parent_cell.iter_mut().for_each(|p| *p = usize::MAX);
        let mut visited = vec![false; total];
        visited[0] = true;
        self.depth[0] = 0;
        self.u[0] = 0.0;
        self.order.push(0);
        let mut head = 0;
        while head < self.order.len() {
            let node = self.order[head];
            head += 1;
            for k in 0..self.incident[node].len() {
                let cell = self.incident[node][k];
                let next = self.other_end(cell, node);
                if visited[next] {
                    continue;
                }
                visited[next] = true;
                self.parent_cell[next] = cell;
                self.depth[next] = self.depth[node] + 1;
                let c = cost[cell];
                if next < self.n {
                    // next is a row, node is a column
                    self.u[next] = c - self.v[node - self.n];
                } else {
                    self.v[next - self.n] = c - self.u[node];
                }
                self.order.push(next);
            }
        }
        debug_assert_eq!(self.order.len(), total, "basis is not a spanning tree");
    }

    fn parent(&self, node: usize) -> usize {
        self.other_end(self.parent_cell[node], node)
    }

    /// Tree path between row `i` and column `j` as the sequence of cells
    /// walked from column `j` to row `i`.
    fn tree_path(&self, i: usize, j: usize) -> Vec<usize> {
        let mut a = Self::row_node(i);
        let mut b = self.col_node(j);
        let mut from_row = Vec::new();
        let mut from_col = Vec::new();
        while self.depth[a] > self.depth[b] {
            from_row.push(self.parent_cell[a]);
            a = self.parent(a);
        }
        while self.depth[b] > self.depth[a] {
            from_col.push(self.parent_cell[b]);
            b = self.parent(b);
        }
        while a != b {
            from_row.push(self.parent_cell[a]);
            a = self.parent(a);
            from_col.push(self.parent_cell[b]);
            b = self.parent(b);
        }
        from_col.extend(from_row.into_iter().rev());
        from_col
    }

    fn basic_cells(&self) -> Vec<usize> {
        (0..self.n * self.m).filter(|&c| self.is_basic[c]).collect()
    }
}

/// Basic flows of a spanning-tree support for the given marginals,
/// by repeatedly peeling leaves of the tree.
fn tree_flows(n: usize, m: usize, cells: &[usize], supply: &[f64], demand: &[f64]) -> Vec<(usize, f64)> {
    let total = n + m;
    let mut residual: Vec<f64> = supply.iter().chain(demand.iter()).copied().collect();
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); total];
    for (k, &c) in cells.iter().enumerate() {
        incident[c / m].push(k);
        incident[n + c % m].push(k);
    }
    let mut degree: Vec<usize> = incident.iter().map(Vec::len).collect();
    let mut done = vec![false; cells.len()];
    let mut flows = vec![0.0; cells.len()];
    let mut stack: Vec<usize> = (0..total).filter(|&v| degree[v] == 1).collect();
    while let Some(v) = stack.pop() {
        if degree[v] != 1 {
            continue;
        }
        let Some(&k) = incident[v].iter().find(|&&k| !done[k]) else {
            continue;
        };
        let c = cells[k];
        let other = if v < n { n + c % m } else { c / m };
        let f = residual[v];
        flows[k] = f;
        done[k] = true;
        residual[v] = 0.0;
        residual[other] -= f;
        degree[v] -= 1;
        degree[other] -= 1;
        if degree[other] == 1 {
            stack.push(other);
        }
    }
    cells.iter().copied().zip(flows).collect()
}

/// Solves `min_{T ∈ U(a, b)} <M, T>` exactly.
pub fn solve_exact_ot(cost: ArrayView2<'_, f64>, source: &[f64], target: &[f64]) -> Result<OtSolution> {
    TransportSolver::new(source, target)?.solve(cost)
}

/// Transportation simplex with fixed marginals. Successive calls to
/// [`TransportSolver::solve`] start from the previous optimal basis, which
/// stays primal feasible because only the cost changes.
pub struct TransportSolver {
    source: Vec<f64>,
    target: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    supply: Vec<f64>,
    demand: Vec<f64>,
    basis: Basis,
}

impl TransportSolver {
    pub fn new(source: &[f64], target: &[f64]) -> Result<Self> {
        check_marginal("source", source)?;
        check_marginal("target", target)?;
        let (n, m) = (source.len(), target.len());
        let a = normalized(source);
        let b = normalized(target);
        let min_pos = a
            .iter()
            .chain(b.iter())
            .copied()
            .filter(|&x| x > 0.0)
            .fold(1.0f64, f64::min);
        let eps = (1e-9 * min_pos / (n + m) as f64).clamp(1e-14, 1e-11);
        let supply: Vec<f64> = a.iter().map(|&x| x + eps).collect();
        let mut demand = b.clone();
        demand[m - 1] += n as f64 * eps;
        // keep the perturbed problem exactly balanced in floating point
        let imbalance: f64 = supply.iter().sum::<f64>() - demand.iter().sum::<f64>();
        demand[m - 1] += imbalance;
        let basis = Basis::north_west(n, m, &supply, &demand);
        Ok(TransportSolver {
            source: source.to_vec(),
            target: target.to_vec(),
            a,
            b,
            supply,
            demand,
            basis,
        })
    }

    pub fn solve(&mut self, cost: ArrayView2<'_, f64>) -> Result<OtSolution> {
        let (n, m) = (self.a.len(), self.b.len());
        if cost.dim() != (n, m) {
            return Err(dimension(format!(
                "cost is {:?} but marginals have lengths {n} and {m}",
                cost.dim()
            )));
        }
        if cost.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("transport cost".into()));
        }
        let cost_vec: Vec<f64> = cost.iter().copied().collect();
        let scale = cost_vec.iter().fold(1.0f64, |s, &c| s.max(c.abs()));
        let tol = 1e-12 * scale;
        let basis = &mut self.basis;

        // perturbed basic flows of the starting basis
        basis.flow.iter_mut().for_each(|f| *f = 0.0);
        for (c, f) in tree_flows(n, m, &basis.basic_cells(), &self.supply, &self.demand) {
            basis.flow[c] = f;
        }

        let max_pivots = 50 * n * m + 1000;
        let mut pivots = 0;
        loop {
            basis.compute_potentials(&cost_vec);
            // most negative reduced cost, lowest index on ties
            let mut enter = usize::MAX;
            let mut best = -tol;
            for i in 0..n {
                let ui = basis.u[i];
                let row = &cost_vec[i * m..(i + 1) * m];
                for (j, &c) in row.iter().enumerate() {
                    let rc = c - ui - basis.v[j];
                    if rc < best && !basis.is_basic[i * m + j] {
                        best = rc;
                        enter = i * m + j;
                    }
                }
            }
            if enter == usize::MAX {
                break;
            }
            if pivots >= max_pivots {
                log::warn!("transport simplex hit the pivot cap ({max_pivots}) on a {n}x{m} problem");
                break;
            }
            pivots += 1;
            let path = basis.tree_path(enter / m, enter % m);
            // path alternates -, +, -, ... starting next to the entering column
            let mut leave = usize::MAX;
            let mut theta = f64::INFINITY;
            for &c in path.iter().step_by(2) {
                let f = basis.flow[c];
                if f < theta || (f == theta && c < leave) {
                    theta = f;
                    leave = c;
                }
            }
            let theta = theta.max(0.0);
            for (k, &c) in path.iter().enumerate() {
                if k % 2 == 0 {
                    basis.flow[c] -= theta;
                } else {
                    basis.flow[c] += theta;
                }
            }
            basis.flow[leave] = 0.0;
            basis.flow[enter] = theta;
            basis.remove_cell(leave);
            basis.add_cell(enter);
        }

        let cells = basis.basic_cells();
        let flows = tree_flows(n, m, &cells, &self.a, &self.b);
        let mut plan = Array2::zeros((n, m));
        let mut degenerate = false;
        let mut objective = 0.0;
        for &(c, f) in &flows {
            let f = if f.abs() < CLEAN_TOL || f < 0.0 {
                if f < -1e-12 {
                    log::debug!("clamping basic flow {f} to zero");
                }
                degenerate = true;
                0.0
            } else {
                f
            };
            plan[[c / m, c % m]] = f;
            objective += cost_vec[c] * f;
        }
        let unique = (0..n * m).all(|c| basis.is_basic[c] || cost_vec[c] - basis.u[c / m] - basis.v[c % m] > tol);
        Ok(OtSolution {
            coupling: Coupling {
                plan,
                source: self.source.clone(),
                target: self.target.clone(),
            },
            objective,
            pivots,
            degenerate,
            unique,
        })
    }
}

/// Reference solver that enumerates every spanning-tree support of the
/// transportation polytope. Only for tiny problems (`n, m <= 4`).
pub fn brute_force_ot(cost: ArrayView2<'_, f64>, source: &[f64], target: &[f64]) -> Result<f64> {
    let (n, m) = cost.dim();
    if n > 4 || m > 4 {
        return Err(validation(format!("brute force is capped at 4x4, got {n}x{m}")));
    }
    if n != source.len() || m != target.len() {
        return Err(dimension("marginal lengths do not match the cost matrix"));
    }
    check_marginal("source", source)?;
    check_marginal("target", target)?;
    let k = n + m - 1;
    let cells = n * m;
    let mut best = f64::INFINITY;
    let mut pick: Vec<usize> = (0..k).collect();
    loop {
        if is_spanning_tree(n, m, &pick) {
            let flows = tree_flows(n, m, &pick, source, target);
            if flows.iter().all(|&(_, f)| f >= -1e-12) {
                let obj: f64 = flows.iter().map(|&(c, f)| cost[[c / m, c % m]] * f.max(0.0)).sum();
                best = best.min(obj);
            }
        }
        // next k-combination of 0..cells in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(best);
            }
            i -= 1;
            if pick[i] < cells - k + i {
                break;
            }
        }
        pick[i] += 1;
        for t in (i + 1)..k {
            pick[t] = pick[t - 1] + 1;
        }
    }
}

fn is_spanning_tree(n: usize, m: usize, cells: &[usize]) -> bool {
    let mut parent: Vec<usize> = (0..n + m).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &c in cells {
        let (r, s) = (find(&mut parent, c / m), find(&mut parent, n + c % m));
        if r == s {
            return false;
        }
        parent[r] = s;
    }
    true
}
