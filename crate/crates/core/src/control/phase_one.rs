//! Phase-one LP: minimum total constraint violation of a QP's constraint set.
//!
//! A strictly positive optimum certifies that no point satisfies the
//! constraints. The LP itself is solved with `minilp`.

use minilp::{ComparisonOp, OptimizationDirection, Problem};

use super::qp::Row;

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOneCertificate {
    /// min Σ |equality residual| + Σ inequality shortfall.
    pub min_violation: f64,
    /// A point attaining it.
    pub point: Vec<f64>,
}

/// Variable bounds are hard; only the rows may be violated. Returns `None`
/// if the bounds themselves are empty or the LP solver fails.
pub fn min_violation(bounds: &[(f64, f64)], equalities: &[Row], inequalities: &[Row]) -> Option<PhaseOneCertificate> {
    if bounds.iter().any(|&(lo, hi)| !(lo <= hi)) {
        return None;
    }
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let x: Vec<_> = bounds.iter().map(|&b| lp.add_var(0.0, b)).collect();
    for row in equalities {
        let up = lp.add_var(1.0, (0.0, f64::INFINITY));
        let down = lp.add_var(1.0, (0.0, f64::INFINITY));
        let mut expr: Vec<_> = row.coeffs.iter().map(|&(k, a)| (x[k], a)).collect();
        expr.push((up, 1.0));
        expr.push((down, -1.0));
        lp.add_constraint(expr.as_slice(), ComparisonOp::Eq, row.rhs);
    }
    for row in inequalities {
        let short = lp.add_var(1.0, (0.0, f64::INFINITY));
        let mut expr: Vec<_> = row.coeffs.iter().map(|&(k, a)| (x[k], a)).collect();
        expr.push((short, 1.0));
        lp.add_constraint(expr.as_slice(), ComparisonOp::Ge, row.rhs);
    }
    let sol = lp.solve().ok()?;
    Some(PhaseOneCertificate {
        min_violation: sol.objective().max(0.0),
        point: x.iter().map(|&v| sol[v]).collect(),
    })
}
