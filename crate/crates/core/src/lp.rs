//! Dense two-phase primal simplex for small equality-form linear programs.
//!
//! Problems have the form `min/max c·x  s.t.  A x = b,  x >= 0`. Pivoting uses
//! Bland's rule (smallest eligible index for both the entering and the leaving
//! variable), which rules out cycling on the heavily degenerate programs that
//! Gibbs-preserving constraints produce. Instances here have at most a few
//! hundred columns, so a dense tableau is the simplest thing that works.

use std::fmt;

const PIVOT_EPS: f64 = 1e-10;
const COST_EPS: f64 = 1e-11;
const FEAS_EPS: f64 = 1e-9;
const MAX_ITERATIONS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LpError {
    Infeasible,
    Unbounded,
    IterationLimit,
}

impl fmt::Display for LpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LpError::Infeasible => write!(f, "infeasible"),
            LpError::Unbounded => write!(f, "unbounded"),
            LpError::IterationLimit => write!(f, "iteration limit reached"),
        }
    }
}

impl std::error::Error for LpError {}

/// An equality-form linear program over nonnegative variables.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    n_vars: usize,
    sense: Sense,
    objective: Vec<f64>,
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
}

/// Optimal vertex returned by [`LinearProgram::solve`].
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Largest absolute equality residual or negativity at the returned vertex.
    pub max_violation: f64,
}

impl LinearProgram {
    pub fn new(n_vars: usize, sense: Sense) -> Self {
        LinearProgram {
            n_vars,
            sense,
            objective: vec![0.0; n_vars],
            rows: Vec::new(),
            rhs: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_constraints(&self) -> usize {
        self.rows.len()
    }

    pub fn set_objective(&mut self, c: Vec<f64>) {
        assert_eq!(c.len(), self.n_vars, "objective length");
        self.objective = c;
    }

    pub fn add_equality(&mut self, coeffs: Vec<f64>, rhs: f64) {
        assert_eq!(coeffs.len(), self.n_vars, "constraint length");
        self.rows.push(coeffs);
        self.rhs.push(rhs);
    }

    /// Largest violation of `A x = b, x >= 0` at `x`.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let mut worst = x.iter().fold(0.0f64, |acc, &v| acc.max(-v));
        for (row, &b) in self.rows.iter().zip(&self.rhs) {
            let lhs: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum();
            worst = worst.max((lhs - b).abs());
        }
        worst
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        let m = self.rows.len();
        let n = self.n_vars;
        let width = n + m + 1;
        let rhs_col = n + m;

        // Row-flip so every right-hand side is nonnegative, then append one
        // artificial per row.
        let mut tab: Vec<Vec<f64>> = Vec::with_capacity(m);
        for (i, (row, &b)) in self.rows.iter().zip(&self.rhs).enumerate() {
            let sign = if b < 0.0 { -1.0 } else { 1.0 };
            let mut t = vec![0.0; width];
            for (j, &a) in row.iter().enumerate() {
                t[j] = sign * a;
            }
            t[n + i] = 1.0;
            t[rhs_col] = sign * b;
            tab.push(t);
        }
        let mut basis: Vec<usize> = (n..n + m).collect();
        let mut iterations = 0usize;

        // Phase 1: minimize the sum of artificials.
        let mut cost = vec![0.0; width];
        for row in &tab {
            for j in 0..n {
                cost[j] -= row[j];
            }
            cost[rhs_col] -= row[rhs_col];
        }
        let mut allowed = vec![true; n + m];
        run_simplex(&mut tab, &mut basis, &mut cost, &allowed, &mut iterations)?;
        let scale = 1.0 + self.rhs.iter().fold(0.0f64, |acc, b| acc.max(b.abs()));
        if -cost[rhs_col] > FEAS_EPS * scale {
            return Err(LpError::Infeasible);
        }

        // Drive zero-level artificials out of the basis; drop redundant rows.
        let mut r = 0;
        while r < tab.len() {
            if basis[r] >= n {
                let entering = (0..n).find(|&j| tab[r][j].abs() > PIVOT_EPS);
                match entering {
                    Some(j) => {
                        pivot(&mut tab, &mut cost, r, j);
                        basis[r] = j;
                    }
                    None => {
                        tab.remove(r);
                        basis.remove(r);
                        continue;
                    }
                }
            }
            r += 1;
        }
        for a in allowed.iter_mut().skip(n) {
            *a = false;
        }

        // Phase 2 in minimization form.
        let sign = match self.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let mut cost = vec![0.0; width];
        for j in 0..n {
            cost[j] = sign * self.objective[j];
        }
        for (row, &b) in tab.iter().zip(&basis) {
            let cb = if b < n { sign * self.objective[b] } else { 0.0 };
            if cb != 0.0 {
                for j in 0..width {
                    cost[j] -= cb * row[j];
                }
            }
        }
        run_simplex(&mut tab, &mut basis, &mut cost, &allowed, &mut iterations)?;

        let mut x = vec![0.0; n];
        for (row, &b) in tab.iter().zip(&basis) {
            if b < n {
                x[b] = row[rhs_col].max(0.0);
            }
        }
        let objective: f64 = self.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        let max_violation = self.violation(&x);
        Ok(LpSolution {
            x,
            objective,
            iterations,
            max_violation,
        })
    }
}

fn pivot(tab: &mut [Vec<f64>], cost: &mut [f64], r: usize, c: usize) {
    let p = tab[r][c];
    for v in tab[r].iter_mut() {
        *v /= p;
    }
    let pivot_row = tab[r].clone();
    for (i, row) in tab.iter_mut().enumerate() {
        if i == r {
            continue;
        }
        let f = row[c];
        if f != 0.0 {
            for (v, &pv) in row.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            row[c] = 0.0;
        }
    }
    let f = cost[c];
    if f != 0.0 {
        for (v, &pv) in cost.iter_mut().zip(&pivot_row) {
            *v -= f * pv;
        }
        cost[c] = 0.0;
    }
}

fn run_simplex(
    tab: &mut [Vec<f64>],
    basis: &mut [usize],
    cost: &mut [f64],
    allowed: &[bool],
    iterations: &mut usize,
) -> Result<(), LpError> {
    let rhs_col = cost.len() - 1;
    loop {
        let entering = (0..rhs_col).find(|&j| allowed[j] && cost[j] < -COST_EPS);
        let Some(c) = entering else {
            return Ok(());
        };
        let mut leave: Option<(usize, f64)> = None;
        for (i, row) in tab.iter().enumerate() {
            let a = row[c];
            if a > PIVOT_EPS {
                let ratio = row[rhs_col].max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((k, best)) => {
                        if ratio < best - 1e-14 || (ratio <= best + 1e-14 && basis[i] < basis[k]) {
                            Some((i, ratio))
                        } else {
                            Some((k, best))
                        }
                    }
                };
            }
        }
        let Some((r, _)) = leave else {
            return Err(LpError::Unbounded);
        };
        pivot(tab, cost, r, c);
        basis[r] = c;
        *iterations += 1;
        if *iterations > MAX_ITERATIONS {
            return Err(LpError::IterationLimit);
        }
    }
}
