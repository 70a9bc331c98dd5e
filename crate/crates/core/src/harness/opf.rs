use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::control::qp::{self, QpOptions, QpOutcome, QuadProgram, Row};
use crate::control::{qp_residuals, KktResiduals};
use crate::network::{GridCase, LaplacianFactor};

/// Nominal dispatch from the DC OPF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpfSolution {
    /// Generation per bus.
    pub generation: Vec<f64>,
    pub injections: Vec<f64>,
    /// Flows on the in-service lines, in topology order.
    pub flows: Vec<f64>,
    /// Σ c_j g_j² over dispatchable buses.
    pub objective: f64,
    pub kkt: KktResiduals,
}

/// The OPF as a QP over the dispatchable buses, returned with the bus of
/// each variable and the fixed generation per bus.
pub fn dc_opf_program(grid: &GridCase) -> (QuadProgram, Vec<usize>, Vec<f64>) {
    let topo = grid.topology();
    let n = grid.n_buses();
    let factor = LaplacianFactor::new(&topo);
    let ptdf = factor.ptdf(&topo);

    let mut vars = Vec::new();
    let mut fixed = vec![0.0; n];
    for (j, b) in grid.buses.iter().enumerate() {
        if b.gen_max > b.gen_min {
            vars.push(j);
        } else {
            fixed[j] = b.gen_max;
        }
    }
    let hessian = DMatrix::from_diagonal(&DVector::from_iterator(
        vars.len(),
        vars.iter().map(|&j| 2.0 * grid.buses[j].cost),
    ));

    let mut equalities = Vec::new();
    for island in factor.islands() {
        let id = factor.island_of()[island[0]];
        let coeffs = vars
            .iter()
            .enumerate()
            .filter(|(_, &j)| factor.island_of()[j] == id)
            .map(|(k, _)| (k, 1.0))
            .collect();
        let rhs: f64 = island.iter().map(|&j| grid.buses[j].demand - fixed[j]).sum();
        equalities.push(Row::new(coeffs, rhs));
    }

    // f = PTDF (g - d): |f| ≤ π as two rows per line.
    let base = &ptdf * DVector::from_iterator(n, (0..n).map(|j| fixed[j] - grid.buses[j].demand));
    let mut inequalities = Vec::new();
    for (e, &lim) in topo.limits().iter().enumerate() {
        let coeffs: Vec<(usize, f64)> = vars
            .iter()
            .enumerate()
            .filter(|(_, &j)| ptdf[(e, j)] != 0.0)
            .map(|(k, &j)| (k, ptdf[(e, j)]))
            .collect();
        let neg = coeffs.iter().map(|&(k, a)| (k, -a)).collect();
        inequalities.push(Row::new(neg, -lim + base[e]));
        inequalities.push(Row::new(coeffs, -lim - base[e]));
    }
    for (k, &j) in vars.iter().enumerate() {
        let b = &grid.buses[j];
        inequalities.push(Row::new(vec![(k, 1.0)], b.gen_min));
        inequalities.push(Row::new(vec![(k, -1.0)], -b.gen_max));
    }
    let program = QuadProgram {
        hessian,
        linear: DVector::zeros(vars.len()),
        equalities,
        inequalities,
    };
    (program, vars, fixed)
}

/// Minimizes Σ c_j g_j² subject to DC flow, line limits and generation
/// bounds. Infeasibility is reported, never relaxed.
pub fn dc_opf(grid: &GridCase) -> Result<OpfSolution, HarnessError> {
    let capacity: f64 = grid.buses.iter().map(|b| b.gen_max).sum();
    let demand = grid.total_demand();
    if capacity < demand {
        return Err(HarnessError::OpfInfeasible(format!(
            "demand {demand:.4} exceeds generation capacity {capacity:.4}"
        )));
    }
    let (program, vars, fixed) = dc_opf_program(grid);
    let sol = match qp::solve(&program, &QpOptions::default())? {
        QpOutcome::Optimal(sol) => sol,
        QpOutcome::Infeasible { blocking } => {
            let meq = program.equalities.len();
            let what = if blocking < meq {
                "island balance".to_string()
            } else if blocking - meq < 2 * grid.topology().n_lines() {
                let id = grid.topology().ids()[(blocking - meq) / 2];
                format!("limit of line {}", grid.line_label(id))
            } else {
                "generation bounds".to_string()
            };
            return Err(HarnessError::OpfInfeasible(format!("blocked by {what}")));
        }
    };
    let kkt = qp_residuals(&program, &sol);
    let mut generation = fixed;
    for (&j, &g) in vars.iter().zip(&sol.x) {
        generation[j] = g;
    }
    let injections: Vec<f64> = generation.iter().zip(&grid.buses).map(|(g, b)| g - b.demand).collect();
    let topo = grid.topology();
    let flows = crate::network::dc_power_flow(&topo, &injections)?.flows;
    Ok(OpfSolution {
        objective: sol.objective,
        generation,
        injections,
        flows,
        kkt,
    })
}

/// Copy of `grid` with line limits and generation bounds multiplied by α.
/// Demands are unchanged.
pub fn scale_limits(grid: &GridCase, alpha: f64) -> GridCase {
    assert!(alpha > 0.0, "scaling factor must be positive");
    let mut out = grid.clone();
    for line in &mut out.lines {
        line.limit *= alpha;
    }
    for bus in &mut out.buses {
        bus.gen_max *= alpha;
        bus.gen_min *= alpha;
    }
    out
}
