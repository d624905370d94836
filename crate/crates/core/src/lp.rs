//! Exact discrete transport by the transportation simplex method.
//!
//! The feasible set `{T ≥ 0 : T1 = v, Tᵀ1 = w}` is a transportation polytope
//! whose bases are spanning trees of the complete bipartite graph between rows
//! and columns. The solver starts from the north-west-corner basis and pivots
//! with Bland's rule (smallest index entering, smallest index leaving among
//! ties), which cannot cycle under degeneracy. Degenerate basic cells keep an
//! explicit zero mass so the basis is always a tree with `k₁ + k₂ − 1` cells.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::measures::{CostMatrix, DualPotentials, TransportPlan};

/// Allowed difference between the total masses of `v` and `w`.
pub const MARGINAL_SLACK: f64 = 1e-8;

/// Optimal plan and potentials together with solver statistics.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub plan: TransportPlan,
    pub duals: DualPotentials,
    pub pivots: usize,
}

impl LpSolution {
    /// `|Σ T c − (Σ φ v + Σ ψ w)|`.
    pub fn duality_gap(&self) -> f64 {
        let dual = self
            .duals
            .objective(self.plan.row_marginal(), self.plan.col_marginal());
        (self.plan.cost() - dual).abs()
    }
}

fn validate(v: &[f64], w: &[f64], c: &CostMatrix) -> Result<()> {
    if c.rows() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: c.rows(),
            got: v.len(),
        });
    }
    if c.cols() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: c.cols(),
            got: w.len(),
        });
    }
    crate::error::check_finite_nonneg(v, "v")?;
    crate::error::check_finite_nonneg(w, "w")?;
    for i in 0..c.rows() {
        if let Some(j) = c.row(i).iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidCost(i, j));
        }
    }
    let (sv, sw): (f64, f64) = (v.iter().sum(), w.iter().sum());
    if (sv - sw).abs() > MARGINAL_SLACK || sv <= 0.0 {
        return Err(Error::InfeasibleMarginals { row: sv, col: sw });
    }
    Ok(())
}

/// Pushes the total-mass residual of `w` relative to `v` onto its largest entry.
fn balance(v: &[f64], w: &[f64]) -> Vec<f64> {
    let mut w = w.to_vec();
    let residual = v.iter().sum::<f64>() - w.iter().sum::<f64>();
    let k = w
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    w[k] = (w[k] + residual).max(0.0);
    w
}

struct Basis {
    rows: usize,
    cols: usize,
    cells: Vec<(usize, usize)>,
    mass: Vec<f64>,
    /// Basic cell indices incident to each row node and then each column node.
    adj: Vec<Vec<usize>>,
}

impl Basis {
    fn north_west(v: &[f64], w: &[f64]) -> Self {
        let (rows, cols) = (v.len(), w.len());
        let mut supply = v.to_vec();
        let mut demand = w.to_vec();
        let mut cells = Vec::with_capacity(rows + cols - 1);
        let mut mass = Vec::with_capacity(rows + cols - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let x = supply[i].min(demand[j]).max(0.0);
            cells.push((i, j));
            mass.push(x);
            supply[i] -= x;
            demand[j] -= x;
            if i + 1 == rows && j + 1 == cols {
                break;
            }
            if i + 1 == rows {
                j += 1;
            } else if j + 1 == cols || supply[i] <= demand[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        let mut basis = Basis {
            rows,
            cols,
            cells,
            mass,
            adj: vec![Vec::new(); rows + cols],
        };
        basis.rebuild_adjacency();
        basis
    }

    fn rebuild_adjacency(&mut self) {
        self.adj.iter_mut().for_each(Vec::clear);
        for (b, &(i, j)) in self.cells.iter().enumerate() {
            self.adj[i].push(b);
            self.adj[self.rows + j].push(b);
        }
    }

    fn duals(&self, c: &CostMatrix) -> (Vec<f64>, Vec<f64>) {
        let n = self.rows + self.cols;
        let mut pot = vec![f64::NAN; n];
        let mut queue = VecDeque::new();
        pot[0] = 0.0;
        queue.push_back(0);
        while let Some(node) = queue.pop_front() {
            for &b in &self.adj[node] {
                let (i, j) = self.cells[b];
                let other = if node < self.rows { self.rows + j } else { i };
                if pot[other].is_nan() {
                    pot[other] = c.get(i, j) - pot[node];
                    queue.push_back(other);
                }
            }
        }
        (pot[..self.rows].to_vec(), pot[self.rows..].to_vec())
    }

    /// Basic cells on the tree path from row `i` to column `j`, in order.
    fn path(&self, i: usize, j: usize) -> Vec<usize> {
        let n = self.rows + self.cols;
        let mut via = vec![usize::MAX; n];
        let mut seen = vec![false; n];
        let mut queue = VecDeque::new();
        seen[i] = true;
        queue.push_back(i);
        let target = self.rows + j;
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &b in &self.adj[node] {
                let (bi, bj) = self.cells[b];
                let other = if node < self.rows { self.rows + bj } else { bi };
                if !seen[other] {
                    seen[other] = true;
                    via[other] = b;
                    queue.push_back(other);
                }
            }
        }
        let mut edges = Vec::new();
        let mut node = target;
        while node != i {
            let b = via[node];
            edges.push(b);
            let (bi, bj) = self.cells[b];
            node = if node < self.rows { self.rows + bj } else { bi };
        }
        edges.reverse();
        edges
    }
}

/// Solves `min Σ T_ij c_ij` over couplings of `v` and `w`.
///
/// Returns a basic optimal plan (at most `k₁ + k₂ − 1` stored cells) and dual
/// potentials that are tight on every basic cell.
pub fn solve_lp(v: &[f64], w: &[f64], c: &CostMatrix) -> Result<(TransportPlan, DualPotentials)> {
    let sol = solve_lp_detailed(v, w, c)?;
    Ok((sol.plan, sol.duals))
}

pub fn solve_lp_detailed(v: &[f64], w: &[f64], c: &CostMatrix) -> Result<LpSolution> {
    validate(v, w, c)?;
    let w_bal = balance(v, w);
    let (k1, k2) = (v.len(), w.len());
    let mut basis = Basis::north_west(v, &w_bal);
    let scale = 1.0 + c.max();
    let tol = 1e-12 * scale;
    let mass_tie = 1e-15;

    let mut pivots = 0usize;
    loop {
        let (u, vv) = basis.duals(c);
        // Bland: first cell in row-major order with negative reduced cost.
        let mut entering = None;
        'scan: for i in 0..k1 {
            let row = c.row(i);
            for j in 0..k2 {
                if row[j] - u[i] - vv[j] < -tol {
                    entering = Some((i, j));
                    break 'scan;
                }
            }
        }
        let Some((ei, ej)) = entering else { break };

        let path = basis.path(ei, ej);
        // Edges alternate −, +, −, … starting next to row ei; there is an odd count.
        let minus: Vec<usize> = path.iter().step_by(2).copied().collect();
        let theta = minus
            .iter()
            .map(|&b| basis.mass[b])
            .fold(f64::INFINITY, f64::min);
        let leaving = minus
            .iter()
            .copied()
            .filter(|&b| basis.mass[b] <= theta + mass_tie)
            .min_by_key(|&b| basis.cells[b].0 * k2 + basis.cells[b].1)
            .expect("cycle has at least one decreasing edge");

        for (k, &b) in path.iter().enumerate() {
            if k % 2 == 0 {
                basis.mass[b] = (basis.mass[b] - theta).max(0.0);
            } else {
                basis.mass[b] += theta;
            }
        }
        basis.cells[leaving] = (ei, ej);
        basis.mass[leaving] = theta;
        basis.rebuild_adjacency();
        pivots += 1;
    }

    let (phi, psi) = basis.duals(c);
    let entries = basis
        .cells
        .iter()
        .zip(&basis.mass)
        .map(|(&(i, j), &m)| (i, j, m))
        .collect();
    let plan = TransportPlan::sparse(entries, v.to_vec(), w.to_vec(), c);
    Ok(LpSolution {
        plan,
        duals: DualPotentials { phi, psi },
        pivots,
    })
}

/// Earth mover's distance: the optimal cost `Σ T_ij c_ij`.
pub fn emd(v: &[f64], w: &[f64], c: &CostMatrix) -> Result<f64> {
    Ok(solve_lp(v, w, c)?.0.cost())
}

/// A single failed optimality condition.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    RowMarginal {
        row: usize,
        excess: f64,
    },
    ColMarginal {
        col: usize,
        excess: f64,
    },
    NegativeMass {
        row: usize,
        col: usize,
        mass: f64,
    },
    DualInfeasible {
        row: usize,
        col: usize,
        excess: f64,
    },
    Slackness {
        row: usize,
        col: usize,
        mass: f64,
        gap: f64,
    },
}

/// Result of [`verify_optimality`].
#[derive(Debug, Clone, Default)]
pub struct Certificate {
    pub primal_feasible: bool,
    pub dual_feasible: bool,
    pub complementary_slackness: bool,
    pub duality_gap: f64,
    pub violations: Vec<Violation>,
}

impl Certificate {
    pub fn is_optimal(&self) -> bool {
        self.primal_feasible && self.dual_feasible && self.complementary_slackness
    }
}

/// Checks primal feasibility, dual feasibility and complementary slackness
/// (`T_ij > tol ⇒ |φ_i + ψ_j − c_ij| ≤ tol`).
pub fn verify_optimality(
    plan: &TransportPlan,
    duals: &DualPotentials,
    c: &CostMatrix,
    tol: f64,
) -> Certificate {
    let mut violations = Vec::new();
    let consistent = plan.rows() == c.rows()
        && plan.cols() == c.cols()
        && duals.phi.len() == c.rows()
        && duals.psi.len() == c.cols();
    if !consistent {
        return Certificate {
            duality_gap: f64::INFINITY,
            ..Default::default()
        };
    }

    for (row, (s, t)) in plan.row_sums().iter().zip(plan.row_marginal()).enumerate() {
        if (s - t).abs() > tol {
            violations.push(Violation::RowMarginal { row, excess: s - t });
        }
    }
    for (col, (s, t)) in plan.col_sums().iter().zip(plan.col_marginal()).enumerate() {
        if (s - t).abs() > tol {
            violations.push(Violation::ColMarginal { col, excess: s - t });
        }
    }
    let entries = plan.entries();
    for &(row, col, mass) in &entries {
        if mass < -tol {
            violations.push(Violation::NegativeMass { row, col, mass });
        }
    }
    let primal_feasible = violations.is_empty();

    let before = violations.len();
    for (row, &p) in duals.phi.iter().enumerate() {
        for (col, &q) in duals.psi.iter().enumerate() {
            let excess = p + q - c.get(row, col);
            if excess > tol {
                violations.push(Violation::DualInfeasible { row, col, excess });
            }
        }
    }
    let dual_feasible = violations.len() == before;

    let before = violations.len();
    for &(row, col, mass) in &entries {
        if mass > tol {
            let gap = duals.phi[row] + duals.psi[col] - c.get(row, col);
            if gap.abs() > tol {
                violations.push(Violation::Slackness {
                    row,
                    col,
                    mass,
                    gap,
                });
            }
        }
    }
    let complementary_slackness = violations.len() == before;

    let duality_gap =
        (plan.recompute_cost(c) - duals.objective(plan.row_marginal(), plan.col_marginal())).abs();
    Certificate {
        primal_feasible,
        dual_feasible,
        complementary_slackness,
        duality_gap,
        violations,
    }
}
