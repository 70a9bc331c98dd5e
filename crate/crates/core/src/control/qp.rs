//! Dense strictly convex QP solver (Goldfarb–Idnani dual active set).
//!
//! ```text
//!     minimize    ½ xᵀ G x + cᵀ x
//!     subject to  aᵢᵀ x  = bᵢ   (equalities)
//!                 aᵢᵀ x ≥ bᵢ   (inequalities)
//! ```
//!
//! Multipliers follow `G x + c = Σ uᵢ aᵢ`, with `uᵢ ≥ 0` on inequalities.
//! Equalities are row-reduced first: dependent consistent rows are dropped
//! (zero multiplier) and inconsistent ones are reported as infeasible.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Sparse constraint row `coeffsᵀ x (=|≥) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl Row {
    pub fn new(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self { coeffs, rhs }
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(k, a)| a * x[k]).sum()
    }

    fn norm(&self) -> f64 {
        self.coeffs.iter().map(|&(_, a)| a * a).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct QuadProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub equalities: Vec<Row>,
    pub inequalities: Vec<Row>,
}

impl QuadProgram {
    pub fn n_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        0.5 * x.dot(&(&self.hessian * &x)) + self.linear.dot(&x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub max_iterations: usize,
    /// Constraint violation tolerance, relative to max(1, |rhs|).
    pub feasibility_tol: f64,
    /// Pivot tolerance for dependence tests.
    pub pivot_tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100_000,
            feasibility_tol: 1e-9,
            pivot_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub eq_duals: Vec<f64>,
    pub ineq_duals: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QpOutcome {
    Optimal(QpSolution),
    /// No point satisfies the constraints. `blocking` names the constraint
    /// that could not be added (equality indices first, then inequalities
    /// offset by the equality count).
    Infeasible { blocking: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("iteration budget of {0} exhausted")]
    IterationLimit(usize),
    #[error("dimension mismatch in constraint {0}")]
    Dimension(usize),
}

/// Drops linearly dependent equality rows. Returns the kept indices, or the
/// index of a row that is inconsistent with the ones before it.
fn independent_equalities(rows: &[Row], n: usize, tol: f64) -> Result<Vec<usize>, usize> {
    // Gaussian elimination on [A | b] with partial pivoting, row by row.
    let mut basis: Vec<(usize, Vec<f64>, f64)> = Vec::new(); // (pivot column, row, rhs)
    let mut kept = Vec::new();
    for (idx, row) in rows.iter().enumerate() {
        let mut a = vec![0.0; n];
        for &(k, v) in &row.coeffs {
            a[k] += v;
        }
        let mut b = row.rhs;
        let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (p, r, rb) in &basis {
            let f = a[*p] / r[*p];
            if f != 0.0 {
                for (ak, rk) in a.iter_mut().zip(r) {
                    *ak -= f * rk;
                }
                b -= f * rb;
            }
        }
        let (piv, mag) = a
            .iter()
            .enumerate()
            .fold((0, 0.0), |(bi, bm), (k, v)| if v.abs() > bm { (k, v.abs()) } else { (bi, bm) });
        if mag <= tol * scale {
            if b.abs() > tol * scale.max(row.rhs.abs()).max(1.0) {
                return Err(idx);
            }
            continue;
        }
        basis.push((piv, a, b));
        kept.push(idx);
    }
    Ok(kept)
}

struct ActiveSet {
    n: usize,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    q: usize,
}

impl ActiveSet {
    /// d = Jᵀ a for a sparse row.
    fn transform(&self, row: &Row, sign: f64) -> DVector<f64> {
        let mut d = DVector::zeros(self.n);
        for &(k, a) in &row.coeffs {
            let a = sign * a;
            for col in 0..self.n {
                d[col] += self.j[(k, col)] * a;
            }
        }
        d
    }

    /// Step direction in x: z = J₂ d₂.
    fn primal_direction(&self, d: &DVector<f64>) -> DVector<f64> {
        let mut z = DVector::zeros(self.n);
        for col in self.q..self.n {
            let dc = d[col];
            if dc != 0.0 {
                for row in 0..self.n {
                    z[row] += self.j[(row, col)] * dc;
                }
            }
        }
        z
    }

    /// Dual direction r = R⁻¹ d₁ (back substitution).
    fn dual_direction(&self, d: &DVector<f64>) -> Vec<f64> {
        let mut r = vec![0.0; self.q];
        for i in (0..self.q).rev() {
            let mut s = d[i];
            for k in i + 1..self.q {
                s -= self.r[(i, k)] * r[k];
            }
            r[i] = s / self.r[(i, i)];
        }
        r
    }

    fn rotate_j(&mut self, a: usize, b: usize, c: f64, s: f64) {
        for row in 0..self.n {
            let (x, y) = (self.j[(row, a)], self.j[(row, b)]);
            self.j[(row, a)] = c * x + s * y;
            self.j[(row, b)] = -s * x + c * y;
        }
    }

    /// Appends a constraint whose transformed normal is `d`.
    fn add(&mut self, mut d: DVector<f64>) {
        for i in (self.q + 1..self.n).rev() {
            let (x, y) = (d[i - 1], d[i]);
            if y == 0.0 {
                continue;
            }
            let h = x.hypot(y);
            let (c, s) = (x / h, y / h);
            d[i - 1] = h;
            d[i] = 0.0;
            self.rotate_j(i - 1, i, c, s);
        }
        for i in 0..=self.q {
            self.r[(i, self.q)] = d[i];
        }
        self.q += 1;
    }

    /// Removes the active constraint at position `k`.
    fn drop(&mut self, k: usize) {
        for col in k..self.q - 1 {
            for row in 0..=col + 1 {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..self.n {
            self.r[(row, self.q - 1)] = 0.0;
        }
        self.q -= 1;
        for col in k..self.q {
            let (x, y) = (self.r[(col, col)], self.r[(col + 1, col)]);
            if y == 0.0 {
                continue;
            }
            let h = x.hypot(y);
            let (c, s) = (x / h, y / h);
            for cc in col..self.q {
                let (u, v) = (self.r[(col, cc)], self.r[(col + 1, cc)]);
                self.r[(col, cc)] = c * u + s * v;
                self.r[(col + 1, cc)] = -s * u + c * v;
            }
            self.r[(col + 1, col)] = 0.0;
            self.rotate_j(col, col + 1, c, s);
        }
    }
}

pub fn solve(problem: &QuadProgram, opts: &QpOptions) -> Result<QpOutcome, QpError> {
    let n = problem.n_vars();
    let all_rows = problem.equalities.iter().chain(&problem.inequalities);
    for (k, row) in all_rows.enumerate() {
        if row.coeffs.iter().any(|&(i, _)| i >= n) {
            return Err(QpError::Dimension(k));
        }
    }
    let meq = problem.equalities.len();
    let kept_eq = match independent_equalities(&problem.equalities, n, opts.pivot_tol) {
        Ok(k) => k,
        Err(blocking) => return Ok(QpOutcome::Infeasible { blocking }),
    };

    let chol = nalgebra::Cholesky::new(problem.hessian.clone()).ok_or(QpError::NotPositiveDefinite)?;
    // J = L⁻ᵀ
    let lt = chol.l().transpose();
    let j = lt
        .solve_upper_triangular(&DMatrix::identity(n, n))
        .ok_or(QpError::NotPositiveDefinite)?;
    let mut x: Vec<f64> = (-chol.solve(&problem.linear)).as_slice().to_vec();

    let mut set = ActiveSet {
        n,
        j,
        r: DMatrix::zeros(n, n),
        q: 0,
    };
    // active[k] = (constraint index in combined numbering, sign)
    let mut active: Vec<(usize, f64)> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0usize;

    let row_of = |idx: usize| -> &Row {
        if idx < meq {
            &problem.equalities[idx]
        } else {
            &problem.inequalities[idx - meq]
        }
    };
    let tol_of = |row: &Row| opts.feasibility_tol * row.rhs.abs().max(1.0);

    let mut pending_eq = kept_eq.into_iter();
    loop {
        // Pick the next constraint to add: remaining equalities first, then
        // the most violated inequality.
        let (p, sign) = if let Some(e) = pending_eq.next() {
            let s = problem.equalities[e].dot(&x) - problem.equalities[e].rhs;
            (e, if s > 0.0 { -1.0 } else { 1.0 })
        } else {
            let mut best: Option<(usize, f64)> = None;
            for (k, row) in problem.inequalities.iter().enumerate() {
                if active.iter().any(|&(a, _)| a == meq + k) {
                    continue;
                }
                let s = row.dot(&x) - row.rhs;
                if s < -tol_of(row) {
                    let nrm = row.norm().max(f64::MIN_POSITIVE);
                    let score = s / nrm;
                    if best.map_or(true, |(_, b)| score < b) {
                        best = Some((meq + k, score));
                    }
                }
            }
            match best {
                Some((p, _)) => (p, 1.0),
                None => break,
            }
        };
        let row = row_of(p);
        let mut u_new = 0.0;
        loop {
            iterations += 1;
            if iterations > opts.max_iterations {
                return Err(QpError::IterationLimit(opts.max_iterations));
            }
            let s_p = sign * (row.dot(&x) - row.rhs);
            let d = set.transform(row, sign);
            let z = set.primal_direction(&d);
            let r = set.dual_direction(&d);

            // Partial step length (drop a constraint).
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (k, &(idx, _)) in active.iter().enumerate() {
                if idx >= meq && r[k] > opts.pivot_tol * 1e-4 {
                    let ratio = u[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(k);
                    }
                }
            }
            // Full step length (make p active).
            let zn: f64 = row.coeffs.iter().map(|&(k, a)| sign * a * z[k]).sum();
            let t2 = if z.norm() > opts.pivot_tol * 1e-3 * d.norm().max(1.0) && zn > 0.0 {
                (-s_p / zn).max(0.0)
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if t.is_infinite() {
                return Ok(QpOutcome::Infeasible { blocking: p });
            }
            for k in 0..set.q {
                u[k] -= t * r[k];
            }
            u_new += t;
            if t2.is_finite() {
                for (xi, zi) in x.iter_mut().zip(z.iter()) {
                    *xi += t * zi;
                }
            }
            if t2 <= t1 {
                set.add(d);
                active.push((p, sign));
                u.push(u_new);
                break;
            }
            let k = drop_at.expect("partial step implies a droppable constraint");
            set.drop(k);
            active.remove(k);
            u.remove(k);
        }
    }

    let mut eq_duals = vec![0.0; meq];
    let mut ineq_duals = vec![0.0; problem.inequalities.len()];
    for (&(idx, sign), &mult) in active.iter().zip(&u) {
        if idx < meq {
            eq_duals[idx] = sign * mult;
        } else {
            ineq_duals[idx - meq] = mult.max(0.0);
        }
    }
    let objective = problem.objective(&x);
    Ok(QpOutcome::Optimal(QpSolution {
        x,
        eq_duals,
        ineq_duals,
        objective,
        iterations,
    }))
}
