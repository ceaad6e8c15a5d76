//! Exact earth mover distance via the transportation simplex.
//!
//! The basis is kept as a spanning tree of the bipartite supply/demand graph
//! (exactly `m + n - 1` cells, zero-flow cells included). Entering cells are
//! chosen by most negative reduced cost; after a fixed number of pivots the
//! solver switches to Bland's rule so degenerate pivots cannot cycle.

use std::collections::VecDeque;

use crate::error::{Error, Result};

const REDUCED_COST_TOL: f64 = 1e-12;

/// Optimal transport plan between two discrete distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct Transport {
    pub cost: f64,
    /// `(source atom, target atom, mass)` for every basic cell with positive flow.
    pub flows: Vec<(usize, usize, f64)>,
}

fn normalize(weights: &[f64], side: &str) -> Result<Vec<f64>> {
    if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "{side} weight {i} is {} (must be finite and >= 0)",
            weights[i]
        )));
    }
    let total: f64 = weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::InvalidArgument(format!("{side} weights sum to zero")));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Minimum-cost transport between normalized `supply` and `demand` under `cost`
/// (row-major, `supply.len() x demand.len()`).
pub fn transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<Transport> {
    let supply = normalize(supply, "source")?;
    let demand = normalize(demand, "target")?;
    if cost.len() != supply.len() * demand.len() {
        return Err(Error::Shape(format!(
            "cost has {} entries for a {}x{} problem",
            cost.len(),
            supply.len(),
            demand.len()
        )));
    }
    if let Some(i) = cost.iter().position(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument(format!("cost entry {i} is not finite")));
    }

    // Atoms without mass never carry flow.
    let rows: Vec<usize> = (0..supply.len()).filter(|&i| supply[i] > 0.0).collect();
    let cols: Vec<usize> = (0..demand.len()).filter(|&j| demand[j] > 0.0).collect();
    let s: Vec<f64> = rows.iter().map(|&i| supply[i]).collect();
    let d: Vec<f64> = cols.iter().map(|&j| demand[j]).collect();
    let n_cols_full = demand.len();
    let c: Vec<f64> = rows
        .iter()
        .flat_map(|&i| cols.iter().map(move |&j| cost[i * n_cols_full + j]))
        .collect();

    let mut solver = Simplex::northwest(s, d, c);
    solver.solve();
    let flows = solver
        .basis
        .iter()
        .filter(|cell| cell.flow > 0.0)
        .map(|cell| (rows[cell.row], cols[cell.col], cell.flow))
        .collect();
    Ok(Transport {
        cost: solver.cost(),
        flows,
    })
}

/// EMD between weighted point sets with Euclidean ground distance.
pub fn emd(
    weights_a: &[f64],
    points_a: &[Vec<f64>],
    weights_b: &[f64],
    points_b: &[Vec<f64>],
) -> Result<f64> {
    if weights_a.len() != points_a.len() || weights_b.len() != points_b.len() {
        return Err(Error::Shape("one weight per point required".into()));
    }
    if weights_a.is_empty() || weights_b.is_empty() {
        return Err(Error::InvalidArgument("empty point set".into()));
    }
    let dim = points_a[0].len();
    if points_a.iter().chain(points_b).any(|p| p.len() != dim) {
        return Err(Error::Shape("points must share one dimension".into()));
    }
    if points_a
        .iter()
        .chain(points_b)
        .flatten()
        .any(|v| !v.is_finite())
    {
        return Err(Error::InvalidArgument("non-finite point coordinate".into()));
    }
    let cost: Vec<f64> = points_a
        .iter()
        .flat_map(|a| points_b.iter().map(move |b| euclidean(a, b)))
        .collect();
    transport(weights_a, weights_b, &cost).map(|t| t.cost)
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    row: usize,
    col: usize,
    flow: f64,
}

struct Simplex {
    m: usize,
    n: usize,
    cost: Vec<f64>,
    basis: Vec<Cell>,
}

impl Simplex {
    /// Northwest-corner start: a staircase of exactly `m + n - 1` cells.
    fn northwest(mut s: Vec<f64>, mut d: Vec<f64>, cost: Vec<f64>) -> Self {
        let (m, n) = (s.len(), d.len());
        let mut basis = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let x = s[i].min(d[j]);
            s[i] -= x;
            d[j] -= x;
            basis.push(Cell { row: i, col: j, flow: x });
            if i == m - 1 && j == n - 1 {
                break;
            }
            if j == n - 1 || (i < m - 1 && s[i] <= d[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self { m, n, cost, basis }
    }

    fn cost(&self) -> f64 {
        self.basis
            .iter()
            .map(|c| c.flow * self.cost[c.row * self.n + c.col])
            .sum()
    }

    /// Node ids: rows are `0..m`, columns `m..m+n`. Returns (node, basis index) lists.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (k, cell) in self.basis.iter().enumerate() {
            adj[cell.row].push((self.m + cell.col, k));
            adj[self.m + cell.col].push((cell.row, k));
        }
        adj
    }

    fn potentials(&self, adj: &[Vec<(usize, usize)>]) -> (Vec<f64>, Vec<f64>) {
        let mut u = vec![0.0; self.m];
        let mut v = vec![0.0; self.n];
        let mut seen = vec![false; self.m + self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(node) = queue.pop_front() {
            for &(next, k) in &adj[node] {
                if seen[next] {
                    continue;
                }
                seen[next] = true;
                let cell = self.basis[k];
                let c = self.cost[cell.row * self.n + cell.col];
                if node < self.m {
                    v[cell.col] = c - u[cell.row];
                } else {
                    u[cell.row] = c - v[cell.col];
                }
                queue.push_back(next);
            }
        }
        (u, v)
    }

    /// Basis indices on the tree path from `from` to `to`.
    fn tree_path(&self, adj: &[Vec<(usize, usize)>], from: usize, to: usize) -> Vec<usize> {
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; self.m + self.n];
        let mut seen = vec![false; self.m + self.n];
        let mut queue = VecDeque::from([from]);
        seen[from] = true;
        while let Some(node) = queue.pop_front() {
            if node == to {
                break;
            }
            for &(next, k) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, k));
                    queue.push_back(next);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = to;
        while node != from {
            let (prev, k) = parent[node].expect("basis is a spanning tree");
            path.push(k);
            node = prev;
        }
        path
    }

    fn solve(&mut self) {
        let scale = self.cost.iter().fold(0.0f64, |a, c| a.max(c.abs())).max(1.0);
        let tol = REDUCED_COST_TOL * scale;
        let dantzig_budget = 50 * (self.m + self.n) * (self.m + self.n) + 100;
        let mut pivots = 0usize;
        loop {
            let adj = self.adjacency();
            let (u, v) = self.potentials(&adj);
            let mut in_basis = vec![false; self.m * self.n];
            for cell in &self.basis {
                in_basis[cell.row * self.n + cell.col] = true;
            }
            let bland = pivots >= dantzig_budget;
            let mut entering: Option<(usize, usize)> = None;
            let mut best = -tol;
            'scan: for i in 0..self.m {
                for j in 0..self.n {
                    if in_basis[i * self.n + j] {
                        continue;
                    }
                    let r = self.cost[i * self.n + j] - u[i] - v[j];
                    if r < best {
                        entering = Some((i, j));
                        if bland {
                            break 'scan;
                        }
                        best = r;
                    }
                }
            }
            let Some((p, q)) = entering else { return };

            // Path from column q back to row p; signs alternate starting with '-'.
            let path = self.tree_path(&adj, self.m + q, p);
            let mut leave_pos = 0;
            let mut theta = f64::INFINITY;
            for (pos, &k) in path.iter().enumerate().step_by(2) {
                let flow = self.basis[k].flow;
                let better = if bland {
                    flow < theta
                        || (flow == theta && k < path[leave_pos])
                } else {
                    flow < theta
                };
                if better {
                    theta = flow;
                    leave_pos = pos;
                }
            }
            for (pos, &k) in path.iter().enumerate() {
                let cell = &mut self.basis[k];
                if pos % 2 == 0 {
                    cell.flow = (cell.flow - theta).max(0.0);
                } else {
                    cell.flow += theta;
                }
            }
            let leaving = path[leave_pos];
            self.basis[leaving] = Cell {
                row: p,
                col: q,
                flow: theta,
            };
            pivots += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sets_are_zero() {
        let pts = vec![vec![0.0, 1.0], vec![2.0, -1.0], vec![5.0, 5.0]];
        let w = [0.2, 0.5, 0.3];
        assert_eq!(emd(&w, &pts, &w, &pts).unwrap(), 0.0);
    }

    #[test]
    fn single_source_split_target() {
        let a = vec![vec![0.0, 0.0]];
        let b = vec![vec![3.0, 4.0], vec![0.0, 0.0]];
        let d = emd(&[1.0], &a, &[0.5, 0.5], &b).unwrap();
        assert!((d - 2.5).abs() < 1e-15);
    }

    #[test]
    fn weights_are_normalized() {
        let a = vec![vec![0.0], vec![1.0]];
        let b = vec![vec![2.0]];
        let d1 = emd(&[1.0, 1.0], &a, &[1.0], &b).unwrap();
        let d2 = emd(&[3.0, 3.0], &a, &[0.1], &b).unwrap();
        assert!((d1 - 1.5).abs() < 1e-12);
        assert!((d1 - d2).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let a = vec![vec![0.0]];
        assert!(emd(&[f64::NAN], &a, &[1.0], &a).is_err());
        assert!(emd(&[-1.0], &a, &[1.0], &a).is_err());
        assert!(emd(&[1.0], &[vec![f64::INFINITY]], &[1.0], &a).is_err());
        assert!(emd(&[0.0], &a, &[1.0], &a).is_err());
        assert!(emd(&[1.0], &a, &[1.0], &[vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn zero_weight_atoms_are_ignored() {
        let a = vec![vec![0.0], vec![100.0]];
        let b = vec![vec![1.0]];
        assert!((emd(&[1.0, 0.0], &a, &[1.0], &b).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn one_dimensional_matches_cdf_formula() {
        // On the line, EMD equals the integral of |F_a - F_b|.
        let a = vec![vec![0.0], vec![1.0], vec![4.0]];
        let b = vec![vec![0.5], vec![2.0], vec![3.0]];
        let wa = [0.3, 0.3, 0.4];
        let wb = [0.5, 0.25, 0.25];
        // Breakpoints 0, .5, 1, 2, 3, 4 with F_a - F_b on each interval.
        let expected = 0.3 * 0.5 + 0.2 * 0.5 + 0.1 * 1.0 + 0.15 * 1.0 + 0.4 * 1.0;
        let d = emd(&wa, &a, &wb, &b).unwrap();
        assert!((d - expected).abs() < 1e-12, "{d} vs {expected}");
    }

    #[test]
    fn transport_plan_is_feasible() {
        let cost = [4.0, 1.0, 3.0, 2.0, 5.0, 1.0, 3.0, 3.0, 2.0];
        let s = [0.5, 0.3, 0.2];
        let d = [0.2, 0.2, 0.6];
        let t = transport(&s, &d, &cost).unwrap();
        let mut rows = [0.0; 3];
        let mut cols = [0.0; 3];
        for &(i, j, f) in &t.flows {
            rows[i] += f;
            cols[j] += f;
        }
        for k in 0..3 {
            assert!((rows[k] - s[k]).abs() < 1e-12);
            assert!((cols[k] - d[k]).abs() < 1e-12);
        }
    }
}
