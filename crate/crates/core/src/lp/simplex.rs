//! Dense two-phase tableau simplex with Bland's anti-cycling rule.
//!
//! Problems are `min c·x` subject to equality rows, `≤` rows and `x ≥ 0`.
//! Every row receives an artificial column; rows whose artificial cannot be
//! pivoted out after phase 1 are linearly redundant and are left in place with
//! a zero-valued artificial that is never allowed to re-enter.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Action, StateId};

pub const FEASIBILITY_TOL: f64 = 1e-9;
pub const OPTIMALITY_TOL: f64 = 1e-9;
pub const PHASE1_TOL: f64 = 1e-7;
const PIVOT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RowKind {
    Eq,
    Le,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpRow {
    pub label: String,
    pub coeffs: Vec<f64>,
    pub kind: RowKind,
    pub rhs: f64,
}

/// Column meaning for LPs built from a model: `x^a_{j,k}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VarLabel {
    pub state: StateId,
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub rows: Vec<LpRow>,
    /// Empty for anonymous problems, otherwise one label per column.
    pub var_labels: Vec<VarLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Basic structural and slack columns (slack of the `s`-th `≤` row is `num_vars + s`).
    pub basis: Vec<usize>,
    /// One multiplier per row, for `min c·x` with `c - Aᵀy ≥ 0` on structural columns.
    pub duals: Vec<f64>,
    pub iterations: usize,
}

impl LpProblem {
    pub fn new(num_vars: usize) -> Self {
        Self {
            objective: vec![0.0; num_vars],
            rows: Vec::new(),
            var_labels: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn push_row(
        &mut self,
        label: impl Into<String>,
        coeffs: Vec<f64>,
        kind: RowKind,
        rhs: f64,
    ) {
        assert_eq!(
            coeffs.len(),
            self.num_vars(),
            "row width must match the variable count"
        );
        self.rows.push(LpRow {
            label: label.into(),
            coeffs,
            kind,
            rhs,
        });
    }

    pub fn eq_rows(&self) -> impl Iterator<Item = &LpRow> {
        self.rows.iter().filter(|r| r.kind == RowKind::Eq)
    }

    pub fn le_rows(&self) -> impl Iterator<Item = &LpRow> {
        self.rows.iter().filter(|r| r.kind == RowKind::Le)
    }

    pub fn column_of(&self, state: StateId, action: Action) -> Option<usize> {
        self.var_labels
            .iter()
            .position(|l| l.state == state && l.action == action.index())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row or sign constraint at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self.rows.iter().map(|r| {
            let lhs: f64 = r.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
            match r.kind {
                RowKind::Eq => (lhs - r.rhs).abs(),
                RowKind::Le => (lhs - r.rhs).max(0.0),
            }
        });
        let signs = x.iter().map(|v| (-v).max(0.0));
        rows.chain(signs).fold(0.0, f64::max)
    }

    /// Sub-problem over the columns with `keep[j]`; returns it with the kept column indices.
    pub fn restrict(&self, keep: &[bool]) -> (LpProblem, Vec<usize>) {
        let cols: Vec<usize> = (0..self.num_vars()).filter(|&j| keep[j]).collect();
        let pick = |v: &[f64]| cols.iter().map(|&j| v[j]).collect::<Vec<_>>();
        let sub = LpProblem {
            objective: pick(&self.objective),
            rows: self
                .rows
                .iter()
                .map(|r| LpRow {
                    label: r.label.clone(),
                    coeffs: pick(&r.coeffs),
                    kind: r.kind,
                    rhs: r.rhs,
                })
                .collect(),
            var_labels: if self.var_labels.is_empty() {
                Vec::new()
            } else {
                cols.iter().map(|&j| self.var_labels[j]).collect()
            },
        };
        (sub, cols)
    }
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// `rows x (cols + 1)`, last column is the right-hand side.
    data: Vec<f64>,
    reduced: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.cols + 1) + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.cols)
    }

    fn set_costs(&mut self, costs: &[f64]) {
        for j in 0..self.cols {
            let mut d = costs[j];
            for i in 0..self.rows {
                d -= costs[self.basis[i]] * self.at(i, j);
            }
            self.reduced[j] = d;
        }
    }

    fn pivot(&mut self, r: usize, e: usize) {
        let w = self.cols + 1;
        let p = self.data[r * w + e];
        for v in &mut self.data[r * w..(r + 1) * w] {
            *v /= p;
        }
        let pivot_row: Vec<f64> = self.data[r * w..(r + 1) * w].to_vec();
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.data[i * w + e];
            if f != 0.0 {
                for (v, pr) in self.data[i * w..(i + 1) * w].iter_mut().zip(&pivot_row) {
                    *v -= f * pr;
                }
                self.data[i * w + e] = 0.0;
            }
        }
        let f = self.reduced[e];
        if f != 0.0 {
            for (d, pr) in self.reduced.iter_mut().zip(&pivot_row) {
                *d -= f * pr;
            }
            self.reduced[e] = 0.0;
        }
        self.basis[r] = e;
    }

    /// Bland iterations over columns `< enter_limit`.
    fn run(&mut self, enter_limit: usize, max_iter: usize, iterations: &mut usize) -> Result<()> {
        loop {
            let Some(e) = (0..enter_limit).find(|&j| self.reduced[j] < -OPTIMALITY_TOL) else {
                return Ok(());
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, e);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i).max(0.0) / a;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            let tie = (ratio - br).abs() <= 1e-12 * (1.0 + br.abs());
                            if (tie && self.basis[i] < self.basis[bi]) || (!tie && ratio < br) {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = best else {
                return Err(Error::Unbounded { column: e });
            };
            self.pivot(r, e);
            *iterations += 1;
            if *iterations > max_iter {
                return Err(Error::IterationLimit(max_iter));
            }
        }
    }
}

/// Solve `problem` to an optimal basic feasible solution.
pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution> {
    let n = problem.num_vars();
    let m = problem.rows.len();
    let slack_of: Vec<Option<usize>> = {
        let mut next = 0;
        problem
            .rows
            .iter()
            .map(|r| {
                (r.kind == RowKind::Le).then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    };
    let num_slack = slack_of.iter().flatten().count();
    let art0 = n + num_slack;
    let cols = art0 + m;
    let w = cols + 1;

    let mut data = vec![0.0; m * w];
    let mut sign = vec![1.0; m];
    for (i, row) in problem.rows.iter().enumerate() {
        let line = &mut data[i * w..(i + 1) * w];
        line[..n].copy_from_slice(&row.coeffs);
        if let Some(s) = slack_of[i] {
            line[n + s] = 1.0;
        }
        line[cols] = row.rhs;
        if row.rhs < 0.0 {
            sign[i] = -1.0;
            for v in line[..cols + 1].iter_mut() {
                *v = -*v;
            }
        }
        line[art0 + i] = 1.0;
    }

    let mut t = Tableau {
        rows: m,
        cols,
        data,
        reduced: vec![0.0; cols],
        basis: (art0..art0 + m).collect(),
    };
    let max_iter = 50_000 + 200 * (m + cols);
    let mut iterations = 0;

    let mut phase1 = vec![0.0; cols];
    phase1[art0..].iter_mut().for_each(|c| *c = 1.0);
    t.set_costs(&phase1);
    t.run(art0, max_iter, &mut iterations)?;
    let residual: f64 = (0..m)
        .filter(|&i| t.basis[i] >= art0)
        .map(|i| t.rhs(i).abs())
        .sum();
    if residual > PHASE1_TOL {
        return Err(Error::Infeasible { residual });
    }

    // Drive zero-valued artificials out of the basis where a structural pivot exists.
    for i in 0..m {
        if t.basis[i] >= art0 {
            let pick = (0..art0)
                .filter(|&j| t.at(i, j).abs() > PIVOT_TOL)
                .max_by(|&a, &b| t.at(i, a).abs().total_cmp(&t.at(i, b).abs()));
            if let Some(j) = pick {
                t.pivot(i, j);
            }
        }
    }

    let mut phase2 = vec![0.0; cols];
    phase2[..n].copy_from_slice(&problem.objective);
    t.set_costs(&phase2);
    t.run(art0, max_iter, &mut iterations)?;

    let mut x = vec![0.0; n];
    for i in 0..m {
        let b = t.basis[i];
        if b < n {
            let v = t.rhs(i);
            x[b] = if v.abs() < FEASIBILITY_TOL { 0.0 } else { v };
        }
    }
    let mut basis: Vec<usize> = t.basis.iter().copied().filter(|&b| b < art0).collect();
    basis.sort_unstable();
    let duals = (0..m).map(|i| -t.reduced[art0 + i] * sign[i]).collect();
    Ok(LpSolution {
        objective: problem.objective_value(&x),
        x,
        basis,
        duals,
        iterations,
    })
}
