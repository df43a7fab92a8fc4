//! Exact LP solutions of small transport problems, used as references.
//!
//! Every basic solution of the transportation polytope is supported on a
//! spanning tree of the complete bipartite graph on rows and columns. Tiny
//! instances enumerate all such trees; larger ones run the transportation
//! simplex (northwest-corner start, Dantzig pricing with a Bland fallback).

use std::collections::VecDeque;

use ndarray::{Array1, Array2};

use crate::error::{OtError, Result};
use crate::numeric::dot;
use crate::problem::{DualPair, OtInstance};

/// Sign slack for primal flows and reduced costs.
const FEAS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleLimits {
    /// Largest `m n` solved by tree enumeration.
    pub enumeration_cells: usize,
    /// Largest `m + n` solved by the simplex path.
    pub simplex_nodes: usize,
}

impl Default for OracleLimits {
    fn default() -> Self {
        Self {
            enumeration_cells: 25,
            simplex_nodes: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub value: f64,
    pub plan: Array2<f64>,
    pub duals: DualPair,
    /// Basic cells of the certifying basis.
    pub basis: Vec<(usize, usize)>,
}

pub fn lp_oracle(inst: &OtInstance) -> Result<LpSolution> {
    lp_oracle_with(inst, OracleLimits::default())
}

pub fn lp_oracle_with(inst: &OtInstance, limits: OracleLimits) -> Result<LpSolution> {
    let (m, n) = inst.dim();
    if m * n <= limits.enumeration_cells {
        enumerate_trees(inst)
    } else if m + n <= limits.simplex_nodes {
        transport_simplex(inst)
    } else {
        Err(OtError::OracleTooLarge { m, n })
    }
}

/// Basic flows and multipliers of a spanning tree given as a cell list.
struct TreeSolution {
    flows: Vec<f64>,
    f: Array1<f64>,
    g: Array1<f64>,
}

fn tree_solution(inst: &OtInstance, cells: &[(usize, usize)]) -> TreeSolution {
    let (m, n) = inst.dim();
    let c = inst.cost();
    // Node ids: rows 0..m, columns m..m+n.
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); m + n];
    for (e, &(i, j)) in cells.iter().enumerate() {
        adj[i].push(e);
        adj[m + j].push(e);
    }

    // Leaf elimination for flows.
    let mut supply: Vec<f64> = inst.a().iter().chain(inst.b().iter()).copied().collect();
    let mut degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut used = vec![false; cells.len()];
    let mut flows = vec![0.0; cells.len()];
    let mut leaves: VecDeque<usize> = (0..m + n).filter(|&v| degree[v] == 1).collect();
    while let Some(v) = leaves.pop_front() {
        let Some(&e) = adj[v].iter().find(|&&e| !used[e]) else {
            continue;
        };
        used[e] = true;
        let (i, j) = cells[e];
        let other = if v < m { m + j } else { i };
        flows[e] = supply[v];
        supply[other] -= supply[v];
        supply[v] = 0.0;
        degree[v] -= 1;
        degree[other] -= 1;
        if degree[other] == 1 {
            leaves.push_back(other);
        }
    }

    // Multipliers: f_0 = 0, f_i + g_j = c_ij along tree edges.
    let mut pot = vec![f64::NAN; m + n];
    pot[0] = 0.0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(v) = queue.pop_front() {
        for &e in &adj[v] {
            let (i, j) = cells[e];
            let (other, value) = if v < m {
                (m + j, c[[i, j]] - pot[v])
            } else {
                (i, c[[i, j]] - pot[v])
            };
            if pot[other].is_nan() {
                pot[other] = value;
                queue.push_back(other);
            }
        }
    }
    TreeSolution {
        flows,
        f: Array1::from(pot[..m].to_vec()),
        g: Array1::from(pot[m..].to_vec()),
    }
}

fn finish(inst: &OtInstance, cells: Vec<(usize, usize)>, sol: TreeSolution) -> LpSolution {
    let mut plan = Array2::zeros(inst.dim());
    for (&(i, j), &x) in cells.iter().zip(sol.flows.iter()) {
        plan[[i, j]] = x.max(0.0);
    }
    LpSolution {
        value: dot(inst.cost(), &plan),
        plan,
        duals: DualPair { f: sol.f, g: sol.g },
        basis: cells,
    }
}

fn certifies(inst: &OtInstance, sol: &TreeSolution) -> bool {
    let scale = 1.0 + inst.cost().iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    sol.flows.iter().all(|&x| x >= -FEAS_EPS)
        && inst
            .cost()
            .indexed_iter()
            .all(|((i, j), &c)| c - sol.f[i] - sol.g[j] >= -FEAS_EPS * scale)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn find(&self, mut v: usize) -> usize {
        while self.parent[v] != v {
            v = self.parent[v];
        }
        v
    }
}

/// Depth-first search over cell subsets that stay acyclic; the first tree
/// that is both primal and dual feasible is optimal.
fn enumerate_trees(inst: &OtInstance) -> Result<LpSolution> {
    let (m, n) = inst.dim();
    let all: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let need = m + n - 1;
    let mut uf = UnionFind {
        parent: (0..m + n).collect(),
    };
    let mut chosen = Vec::with_capacity(need);
    let mut found = None;
    search(inst, &all, 0, need, &mut uf, &mut chosen, &mut found);
    let (cells, sol) = found.ok_or_else(|| OtError::Numerical("no certifying basis found".into()))?;
    Ok(finish(inst, cells, sol))
}

fn search(
    inst: &OtInstance,
    all: &[(usize, usize)],
    from: usize,
    need: usize,
    uf: &mut UnionFind,
    chosen: &mut Vec<(usize, usize)>,
    found: &mut Option<(Vec<(usize, usize)>, TreeSolution)>,
) {
    if found.is_some() {
        return;
    }
    if chosen.len() == need {
        let sol = tree_solution(inst, chosen);
        if certifies(inst, &sol) {
            *found = Some((chosen.clone(), sol));
        }
        return;
    }
    let m = inst.dim().0;
    for k in from..all.len() {
        if all.len() - k < need - chosen.len() {
            return;
        }
        let (i, j) = all[k];
        let (ri, rj) = (uf.find(i), uf.find(m + j));
        if ri == rj {
            continue;
        }
        uf.parent[ri] = rj;
        chosen.push((i, j));
        search(inst, all, k + 1, need, uf, chosen, found);
        chosen.pop();
        uf.parent[ri] = ri;
        if found.is_some() {
            return;
        }
    }
}

/// Transportation simplex on the full instance.
pub fn transport_simplex(inst: &OtInstance) -> Result<LpSolution> {
    let (m, n) = inst.dim();
    let c = inst.cost();
    let mut basis = northwest_corner(inst);
    let max_pivots = 50 * m * n + 1000;
    let mut degenerate_run = 0;
    for _ in 0..max_pivots {
        let sol = tree_solution(inst, &basis);
        let flow = &sol.flows;
        let bland = degenerate_run > m + n;
        let scale = 1.0 + c.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let mut entering = None;
        let mut best = -FEAS_EPS * scale;
        'price: for i in 0..m {
            for j in 0..n {
                let d = c[[i, j]] - sol.f[i] - sol.g[j];
                if d < best {
                    entering = Some((i, j));
                    if bland {
                        break 'price;
                    }
                    best = d;
                }
            }
        }
        let Some((ei, ej)) = entering else {
            return Ok(finish(inst, basis, sol));
        };

        let path = tree_path(m, n, &basis, ei, m + ej);
        // Cells on the path alternate -, +, -, ... starting at row `ei`.
        let mut leave_pos = None;
        let mut step = f64::INFINITY;
        for (k, &e) in path.iter().enumerate() {
            if k % 2 == 0 {
                let better = flow[e] < step || (bland && flow[e] == step && basis[e] < basis[leave_pos.unwrap()]);
                if better {
                    step = flow[e];
                    leave_pos = Some(e);
                }
            }
        }
        let leave = leave_pos.ok_or_else(|| OtError::Numerical("simplex found no leaving cell".into()))?;
        degenerate_run = if step <= 0.0 { degenerate_run + 1 } else { 0 };
        basis[leave] = (ei, ej);
    }
    Err(OtError::Numerical("transportation simplex hit its pivot cap".into()))
}

/// Tree cells on the path from node `from` to node `to` (row ids `0..m`,
/// column ids `m..m+n`), in order.
fn tree_path(m: usize, n: usize, basis: &[(usize, usize)], from: usize, to: usize) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); m + n];
    for (e, &(i, j)) in basis.iter().enumerate() {
        adj[i].push(e);
        adj[m + j].push(e);
    }
    let mut via = vec![usize::MAX; m + n];
    let mut seen = vec![false; m + n];
    seen[from] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(v) = queue.pop_front() {
        if v == to {
            break;
        }
        for &e in &adj[v] {
            let (i, j) = basis[e];
            let other = if v < m { m + j } else { i };
            if !seen[other] {
                seen[other] = true;
                via[other] = e;
                queue.push_back(other);
            }
        }
    }
    let mut path = Vec::new();
    let mut v = to;
    while v != from {
        let e = via[v];
        path.push(e);
        let (i, j) = basis[e];
        v = if v < m { m + j } else { i };
    }
    path.reverse();
    path
}

/// `m + n - 1` cells forming a spanning tree, with the northwest-corner flows.
fn northwest_corner(inst: &OtInstance) -> Vec<(usize, usize)> {
    let (m, n) = inst.dim();
    let (mut i, mut j) = (0, 0);
    let mut ra = inst.a()[0];
    let mut rb = inst.b()[0];
    let mut cells = Vec::with_capacity(m + n - 1);
    loop {
        cells.push((i, j));
        if i == m - 1 && j == n - 1 {
            break;
        }
        // Move right when the column is the smaller remainder or the rows are used up.
        if (rb <= ra && j < n - 1) || i == m - 1 {
            ra -= rb.min(ra);
            j += 1;
            rb = inst.b()[j];
        } else {
            rb -= ra.min(rb);
            i += 1;
            ra = inst.a()[i];
        }
    }
    cells
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{generate, GenConfig};
    use crate::problem::kkt_residual;
    use ndarray::array;

    #[test]
    fn single_cell() {
        let inst = OtInstance::new(array![[0.3]], array![1.0], array![1.0]).unwrap();
        let sol = lp_oracle(&inst).unwrap();
        assert_eq!(sol.value, 0.3);
        assert_eq!(sol.plan, array![[1.0]]);
    }

    #[test]
    fn anti_diagonal_cost() {
        let half = array![0.5, 0.5];
        let inst = OtInstance::new(array![[0.0, 1.0], [1.0, 0.0]], half.clone(), half).unwrap();
        let sol = lp_oracle(&inst).unwrap();
        assert_eq!(sol.value, 0.0);
        assert_eq!(sol.plan, array![[0.5, 0.0], [0.0, 0.5]]);
        assert_eq!(kkt_residual(&inst, &sol.plan, &sol.duals).unwrap().delta_kkt, 0.0);
    }

    #[test]
    fn zero_cost_certificate() {
        let inst = OtInstance::new(Array2::zeros((3, 2)), array![0.2, 0.3, 0.5], array![0.6, 0.4]).unwrap();
        let sol = lp_oracle(&inst).unwrap();
        assert_eq!(sol.value, 0.0);
        assert_eq!(kkt_residual(&inst, &sol.plan, &sol.duals).unwrap().delta_kkt, 0.0);
    }

    #[test]
    fn size_limit() {
        let inst = generate(&GenConfig::new(40, 40, 1)).unwrap();
        assert_eq!(lp_oracle(&inst), Err(OtError::OracleTooLarge { m: 40, n: 40 }));
    }

    #[test]
    fn northwest_corner_is_a_spanning_tree() {
        let inst = generate(&GenConfig::new(4, 6, 3)).unwrap();
        let cells = northwest_corner(&inst);
        assert_eq!(cells.len(), 9);
        let sol = tree_solution(&inst, &cells);
        assert!(sol.flows.iter().all(|x| *x >= -1e-15));
        assert!(sol.f.iter().chain(sol.g.iter()).all(|v| v.is_finite()));
    }

    #[test]
    fn enumeration_and_simplex_agree() {
        for seed in 0..10 {
            let inst = generate(&GenConfig::new(4, 5, seed)).unwrap();
            let a = enumerate_trees(&inst).unwrap();
            let b = transport_simplex(&inst).unwrap();
            assert!((a.value - b.value).abs() <= 1e-14, "seed {seed}");
            for sol in [&a, &b] {
                assert!(kkt_residual(&inst, &sol.plan, &sol.duals).unwrap().delta_kkt <= 1e-12);
            }
        }
    }
}
