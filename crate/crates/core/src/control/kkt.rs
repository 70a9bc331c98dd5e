//! KKT certificates, computed independently of the solvers that produce the
//! points they check.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::problem::{ControlProblem, ControlSolution};
use super::qp::{QpSolution, QuadProgram};
use crate::network::Topology;

/// Infinity-norm residuals of the four KKT conditions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

/// Residuals of a generic QP point under the convention `G x + c = Σ uᵢ aᵢ`.
pub fn qp_residuals(problem: &QuadProgram, sol: &QpSolution) -> KktResiduals {
    let x = DVector::from_column_slice(&sol.x);
    let mut grad = &problem.hessian * &x + &problem.linear;
    let mut res = KktResiduals::default();
    for (row, &u) in problem.equalities.iter().zip(&sol.eq_duals) {
        for &(k, a) in &row.coeffs {
            grad[k] -= u * a;
        }
        res.primal = res.primal.max((row.dot(&sol.x) - row.rhs).abs());
    }
    for (row, &u) in problem.inequalities.iter().zip(&sol.ineq_duals) {
        for &(k, a) in &row.coeffs {
            grad[k] -= u * a;
        }
        let slack = row.dot(&sol.x) - row.rhs;
        res.primal = res.primal.max((-slack).max(0.0));
        res.dual = res.dual.max((-u).max(0.0));
        res.complementarity = res.complementarity.max((u * slack).abs());
    }
    res.stationarity = grad.amax();
    res
}

/// Full-form KKT check of a control solution.
///
/// Works on the original variables (d, f, θ) rather than the reduced program
/// the solver uses: it verifies the balance, Kirchhoff, ACE, line and control
/// constraints on the reported primal point, plus
///
/// ```text
///   dg_j/α_j + ν_j − σg⁻_j + σg⁺_j = 0
///   ds_j/αL_j − ν_j − σs⁻_j + σs⁺_j = 0
///   C B Cᵀ (ν − Eᵀμ) + C B (ρ⁺ − ρ⁻) = 0
/// ```
///
/// with ν the per-bus balance multipliers and μ the ACE multipliers.
pub fn control_residuals(problem: &ControlProblem, sol: &ControlSolution) -> Option<KktResiduals> {
    let duals = sol.duals.as_ref()?;
    let topo: &Topology = &problem.topology;
    let n = topo.n_buses();
    let mut res = KktResiduals::default();
    let mut primal = |v: f64| res.primal = res.primal.max(v);

    // Balance and Kirchhoff.
    let outflow = topo.net_outflow(&sol.flows);
    for j in 0..n {
        let d = sol.gen_adjust[j] - sol.shed[j];
        primal((problem.injections[j] - d - outflow[j]).abs());
    }
    let kirchhoff = topo.flows_from_angles(&sol.angles);
    for (f, k) in sol.flows.iter().zip(&kirchhoff) {
        primal((f - k).abs());
    }
    // ACE on enforced rows.
    let n_areas = problem.n_areas();
    let mut export = vec![0.0; n_areas];
    for j in 0..n {
        export[problem.area_of[j]] += outflow[j];
    }
    for a in 0..n_areas {
        if !problem.lifted[a] {
            primal((export[a] - problem.scheduled_export[a]).abs());
        }
    }
    // Line and control boxes.
    if problem.enforce_line_limits {
        for (f, lim) in sol.flows.iter().zip(topo.limits()) {
            primal((f.abs() - lim).max(0.0));
        }
    }
    for j in 0..n {
        let (lo, hi) = problem.gen_bounds[j];
        primal((lo - sol.gen_adjust[j]).max(0.0));
        primal((sol.gen_adjust[j] - hi).max(0.0));
        let hi = problem.shed_cap(j);
        primal((-sol.shed[j]).max(0.0));
        primal((sol.shed[j] - hi).max(0.0));
    }

    // Dual signs and complementarity.
    let mut dual = 0.0f64;
    let mut comp = 0.0f64;
    for j in 0..n {
        let (lo, hi) = problem.gen_bounds[j];
        for (mult, slack) in [
            (duals.gen_lower[j], sol.gen_adjust[j] - lo),
            (duals.gen_upper[j], hi - sol.gen_adjust[j]),
            (duals.shed_lower[j], sol.shed[j]),
            (duals.shed_upper[j], problem.shed_cap(j) - sol.shed[j]),
        ] {
            dual = dual.max((-mult).max(0.0));
            comp = comp.max((mult * slack).abs());
        }
    }
    for (e, f) in sol.flows.iter().enumerate() {
        let lim = topo.limits()[e];
        let (up, down) = (duals.line_upper[e], duals.line_lower[e]);
        if !problem.enforce_line_limits && (up != 0.0 || down != 0.0) {
            dual = dual.max(up.abs()).max(down.abs());
        }
        dual = dual.max((-up).max(0.0)).max((-down).max(0.0));
        comp = comp.max((up * (lim - f)).abs()).max((down * (f + lim)).abs());
    }
    for a in 0..n_areas {
        if problem.lifted[a] {
            dual = dual.max(duals.ace[a].abs());
        }
    }
    res.dual = dual;
    res.complementarity = comp;

    // Stationarity in d.
    let mut stat = 0.0f64;
    for j in 0..n {
        let nu = duals.balance[j];
        if problem.gen_bounds[j].1 > problem.gen_bounds[j].0 {
            let g = sol.gen_adjust[j] / problem.alpha_gen[j] + nu - duals.gen_lower[j] + duals.gen_upper[j];
            stat = stat.max(g.abs());
        }
        if problem.shed_cap(j) > 0.0 {
            let s = sol.shed[j] / problem.alpha_load[j] - nu - duals.shed_lower[j] + duals.shed_upper[j];
            stat = stat.max(s.abs());
        }
    }
    // Stationarity in (f, θ): L(ν − Eᵀμ) + C B (ρ⁺ − ρ⁻) = 0.
    let shifted: Vec<f64> = (0..n)
        .map(|j| duals.balance[j] - duals.ace[problem.area_of[j]])
        .collect();
    let line_term: Vec<f64> = (0..topo.n_lines())
        .map(|e| duals.line_upper[e] - duals.line_lower[e])
        .collect();
    let mut net = vec![0.0; n];
    for (e, (&(i, k), &b)) in topo.ends().iter().zip(topo.susceptance()).enumerate() {
        let v = b * (shifted[i] - shifted[k]) + b * line_term[e];
        net[i] += v;
        net[k] -= v;
    }
    for v in net {
        stat = stat.max(v.abs());
    }
    res.stationarity = stat;
    Some(res)
}
