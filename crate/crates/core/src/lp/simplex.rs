//! Dense two-phase tableau simplex with dual recovery.
//!
//! Entering variables follow the largest reduced cost until a run of
//! degenerate pivots is observed, at which point Bland's smallest-index rule
//! takes over until the objective strictly improves again.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub const FEASIBILITY_TOL: f64 = 1e-7;
pub const OPTIMALITY_TOL: f64 = 1e-6;

const PIVOT_TOL: f64 = 1e-9;
const REDUCED_COST_TOL: f64 = 1e-10;
const DEGENERATE_RUN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `max c.x  s.t.  A x (<=|=|>=) b,  x >= 0`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub primal: Vec<f64>,
    /// One multiplier per constraint, in the sign convention of a maximization
    /// problem: `>= 0` for `Le` rows, `<= 0` for `Ge` rows, free for `Eq`.
    pub duals: Vec<f64>,
    pub objective: f64,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

impl LpProblem {
    pub fn new(num_vars: usize) -> Self {
        LpProblem { objective: vec![0.0; num_vars], constraints: Vec::new() }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// Appends a variable and returns its index.
    pub fn add_var(&mut self, cost: f64) -> usize {
        self.objective.push(cost);
        self.objective.len() - 1
    }

    pub fn set_objective(&mut self, var: usize, cost: f64) {
        self.objective[var] = cost;
    }

    pub fn add_constraint(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) -> usize {
        debug_assert!(coeffs.iter().all(|&(v, _)| v < self.objective.len()));
        self.constraints.push(Constraint { coeffs, relation, rhs });
        self.constraints.len() - 1
    }

    /// Objective value of `x`.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any constraint or bound by `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = x.iter().fold(0.0f64, |acc, &v| acc.max(-v));
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().map(|&(v, a)| a * x[v]).sum();
            let viol = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }

    /// Plain-text dump in CPLEX LP style, for cross-checking with external solvers.
    pub fn to_lp_string(&self) -> String {
        let mut out = String::from("Maximize\n obj:");
        let mut any = false;
        for (v, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                write_term(&mut out, c, v, !any);
                any = true;
            }
        }
        if !any {
            out.push_str(" 0 x0");
        }
        out.push_str("\nSubject To\n");
        for (k, c) in self.constraints.iter().enumerate() {
            let _ = write!(out, " c{k}:");
            if c.coeffs.is_empty() {
                out.push_str(" 0 x0");
            }
            for (idx, &(v, a)) in c.coeffs.iter().enumerate() {
                write_term(&mut out, a, v, idx == 0);
            }
            let rel = match c.relation {
                Relation::Le => "<=",
                Relation::Eq => "=",
                Relation::Ge => ">=",
            };
            let _ = writeln!(out, " {rel} {}", c.rhs);
        }
        out.push_str("End\n");
        out
    }
}

fn write_term(out: &mut String, coef: f64, var: usize, first: bool) {
    if coef < 0.0 {
        let _ = write!(out, " - {} x{var}", -coef);
    } else if first {
        let _ = write!(out, " {coef} x{var}");
    } else {
        let _ = write!(out, " + {coef} x{var}");
    }
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// `rows` x (`cols` + 1), last column is the right-hand side.
    a: Vec<f64>,
    /// Reduced costs `c_B B^-1 A - c`, plus the objective value in the last slot.
    obj: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn width(&self) -> usize {
        self.cols + 1
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.a[r * self.width() + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width();
        let inv = 1.0 / self.a[pr * w + pc];
        {
            let row = &mut self.a[pr * w..(pr + 1) * w];
            for v in row.iter_mut() {
                *v *= inv;
            }
            row[pc] = 1.0;
        }
        let pivot_row: Vec<f64> = self.a[pr * w..(pr + 1) * w].to_vec();
        let nz: Vec<usize> = (0..w).filter(|&c| pivot_row[c] != 0.0).collect();
        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let f = self.a[r * w + pc];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.a[r * w..(r + 1) * w];
            for &c in &nz {
                row[c] -= f * pivot_row[c];
            }
            row[pc] = 0.0;
        }
        let f = self.obj[pc];
        if f != 0.0 {
            for &c in &nz {
                self.obj[c] -= f * pivot_row[c];
            }
            self.obj[pc] = 0.0;
        }
        self.basis[pr] = pc;
    }

    /// Resets the objective row for cost vector `cost` (length `cols`).
    fn price(&mut self, cost: &[f64]) {
        let w = self.width();
        self.obj = vec![0.0; w];
        for (c, &v) in cost.iter().enumerate() {
            self.obj[c] = -v;
        }
        for r in 0..self.rows {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                for c in 0..w {
                    self.obj[c] += cb * self.a[r * w + c];
                }
            }
        }
    }

    /// Runs primal simplex on the current objective row. Columns flagged in
    /// `barred` never enter. Returns false if unbounded.
    fn optimize(&mut self, barred: &[bool]) -> bool {
        let mut bland = false;
        let mut degenerate = 0usize;
        loop {
            let entering = if bland {
                (0..self.cols).find(|&c| !barred[c] && self.obj[c] < -REDUCED_COST_TOL)
            } else {
                let mut best = None;
                let mut best_val = -REDUCED_COST_TOL;
                for c in 0..self.cols {
                    if !barred[c] && self.obj[c] < best_val {
                        best_val = self.obj[c];
                        best = Some(c);
                    }
                }
                best
            };
            let Some(pc) = entering else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let coef = self.at(r, pc);
                if coef > PIVOT_TOL {
                    let ratio = self.rhs(r).max(0.0) / coef;
                    match leave {
                        None => leave = Some((r, ratio)),
                        Some((lr, lratio)) => {
                            let better = ratio < lratio - 1e-12
                                || (ratio <= lratio + 1e-12 && self.basis[r] < self.basis[lr]);
                            if better {
                                leave = Some((r, ratio));
                            }
                        }
                    }
                }
            }
            let Some((pr, ratio)) = leave else {
                return false;
            };
            if ratio <= 1e-12 {
                degenerate += 1;
                if degenerate >= DEGENERATE_RUN {
                    bland = true;
                }
            } else {
                degenerate = 0;
                bland = false;
            }
            self.pivot(pr, pc);
        }
    }
}

/// Solves `p`, reporting infeasibility or unboundedness through the status.
pub fn solve_lp(p: &LpProblem) -> LpSolution {
    let nv = p.num_vars();
    let nr = p.num_constraints();

    // Normalize to non-negative right-hand sides.
    let mut flipped = vec![false; nr];
    let mut rels = Vec::with_capacity(nr);
    for (k, c) in p.constraints.iter().enumerate() {
        if c.rhs < 0.0 {
            flipped[k] = true;
            rels.push(match c.relation {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            });
        } else {
            rels.push(c.relation);
        }
    }

    // Column layout: structural | slack/surplus | artificial.
    let mut slack_col = vec![None; nr];
    let mut art_col = vec![None; nr];
    let mut cols = nv;
    for (k, rel) in rels.iter().enumerate() {
        if *rel != Relation::Eq {
            slack_col[k] = Some(cols);
            cols += 1;
        }
    }
    let first_art = cols;
    for (k, rel) in rels.iter().enumerate() {
        if *rel != Relation::Le {
            art_col[k] = Some(cols);
            cols += 1;
        }
    }

    let w = cols + 1;
    let mut a = vec![0.0; nr * w];
    let mut basis = vec![0; nr];
    for (k, c) in p.constraints.iter().enumerate() {
        let sign = if flipped[k] { -1.0 } else { 1.0 };
        let row = &mut a[k * w..(k + 1) * w];
        for &(v, coef) in &c.coeffs {
            row[v] += sign * coef;
        }
        row[cols] = sign * c.rhs;
        match rels[k] {
            Relation::Le => {
                row[slack_col[k].unwrap()] = 1.0;
                basis[k] = slack_col[k].unwrap();
            }
            Relation::Ge => {
                row[slack_col[k].unwrap()] = -1.0;
                row[art_col[k].unwrap()] = 1.0;
                basis[k] = art_col[k].unwrap();
            }
            Relation::Eq => {
                row[art_col[k].unwrap()] = 1.0;
                basis[k] = art_col[k].unwrap();
            }
        }
    }
    let mut t = Tableau { rows: nr, cols, a, obj: vec![0.0; w], basis };
    let no_bar = vec![false; cols];

    if first_art < cols {
        let mut phase1 = vec![0.0; cols];
        for c in phase1.iter_mut().skip(first_art) {
            *c = -1.0;
        }
        t.price(&phase1);
        t.optimize(&no_bar);
        if t.obj[cols] < -FEASIBILITY_TOL {
            return LpSolution {
                status: LpStatus::Infeasible,
                primal: vec![0.0; nv],
                duals: vec![0.0; nr],
                objective: 0.0,
            };
        }
        // Drive zero-level artificials out of the basis where possible.
        for r in 0..nr {
            if t.basis[r] >= first_art {
                if let Some(c) = (0..first_art).find(|&c| t.at(r, c).abs() > PIVOT_TOL) {
                    t.pivot(r, c);
                }
            }
        }
    }

    let mut cost = vec![0.0; cols];
    cost[..nv].copy_from_slice(&p.objective);
    t.price(&cost);
    let mut barred = vec![false; cols];
    for b in barred.iter_mut().skip(first_art) {
        *b = true;
    }
    if !t.optimize(&barred) {
        return LpSolution {
            status: LpStatus::Unbounded,
            primal: vec![0.0; nv],
            duals: vec![0.0; nr],
            objective: f64::INFINITY,
        };
    }

    let mut primal = vec![0.0; nv];
    for r in 0..nr {
        let b = t.basis[r];
        if b < nv {
            let v = t.rhs(r);
            primal[b] = if v.abs() < 1e-12 { 0.0 } else { v };
        }
    }
    let duals = (0..nr)
        .map(|k| {
            let col = match rels[k] {
                Relation::Le => slack_col[k].unwrap(),
                _ => art_col[k].unwrap(),
            };
            let y = t.obj[col];
            let y = if flipped[k] { -y } else { y };
            if y.abs() < 1e-12 {
                0.0
            } else {
                y
            }
        })
        .collect();
    LpSolution { status: LpStatus::Optimal, objective: p.evaluate(&primal), primal, duals }
}
