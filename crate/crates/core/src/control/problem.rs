use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::kkt::{control_residuals, KktResiduals};
use super::phase_one::min_violation;
use super::qp::{self, QpError, QpOptions, QpOutcome, QpSolution, QuadProgram, Row};
use crate::network::{GridCase, LaplacianFactor, NetworkError, Topology};

/// Position on the relaxation ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelaxationLevel {
    /// Generation adjustment only.
    L0,
    /// Load shedding allowed, up to each bus's demand.
    L1,
    /// Every ACE row lifted.
    L2,
}

impl RelaxationLevel {
    pub const ALL: [RelaxationLevel; 3] = [Self::L0, Self::L1, Self::L2];

    pub fn next(self) -> Option<Self> {
        match self {
            Self::L0 => Some(Self::L1),
            Self::L1 => Some(Self::L2),
            Self::L2 => None,
        }
    }

    pub fn allows_shedding(self) -> bool {
        self >= Self::L1
    }
}

impl std::fmt::Display for RelaxationLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::L0 => "L0",
            Self::L1 => "L1",
            Self::L2 => "L2",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("solver stalled: {0}")]
    SolverStall(String),
    #[error("relaxation ladder exhausted without a feasible problem")]
    LadderExhausted,
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// One instance of the steady-state control program around an operating
/// point, on a fixed post-failure topology.
///
/// The control action at bus j is `d_j = dg_j − ds_j`: `dg` lowers generation
/// (negative raises it) and `ds ≥ 0` sheds load. Post-control injections are
/// `p − d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlProblem {
    pub topology: Topology,
    pub generation: Vec<f64>,
    pub demand: Vec<f64>,
    /// `generation − demand`.
    pub injections: Vec<f64>,
    /// Box on `dg`.
    pub gen_bounds: Vec<(f64, f64)>,
    pub alpha_gen: Vec<f64>,
    pub alpha_load: Vec<f64>,
    pub area_of: Vec<usize>,
    /// Target net export per area.
    pub scheduled_export: Vec<f64>,
    /// ACE rows not enforced, by area.
    pub lifted: Vec<bool>,
    pub enforce_line_limits: bool,
    pub level: RelaxationLevel,
}

impl ControlProblem {
    /// L0 problem around the given operating point. Generator boxes come from
    /// the grid's capacities; the export schedule is the current one.
    pub fn new(grid: &GridCase, topology: Topology, generation: Vec<f64>, demand: Vec<f64>) -> Self {
        let n = grid.n_buses();
        assert_eq!(generation.len(), n);
        assert_eq!(demand.len(), n);
        let injections: Vec<f64> = generation.iter().zip(&demand).map(|(g, d)| g - d).collect();
        let gen_bounds = grid
            .buses
            .iter()
            .zip(&generation)
            .map(|(b, &g)| ((g - b.gen_max).min(0.0), g.max(0.0)))
            .collect();
        let area_of: Vec<usize> = grid.buses.iter().map(|b| b.area).collect();
        let n_areas = grid.n_areas();
        let mut scheduled_export = vec![0.0; n_areas];
        for (j, &a) in area_of.iter().enumerate() {
            scheduled_export[a] += injections[j];
        }
        let mut problem = Self {
            alpha_gen: grid.buses.iter().map(|b| b.alpha).collect(),
            alpha_load: grid.buses.iter().map(|b| b.alpha_load).collect(),
            lifted: vec![false; n_areas],
            topology,
            generation,
            demand,
            injections,
            gen_bounds,
            area_of,
            scheduled_export,
            enforce_line_limits: true,
            level: RelaxationLevel::L0,
        };
        problem.lift_isolated_areas();
        problem
    }

    /// Problem around the grid's nominal dispatch.
    pub fn nominal(grid: &GridCase, topology: Topology) -> Self {
        let generation = grid.buses.iter().map(|b| b.generation).collect();
        let demand = grid.buses.iter().map(|b| b.demand).collect();
        Self::new(grid, topology, generation, demand)
    }

    /// Replaces the export schedule, e.g. with pre-failure tie-line exports.
    /// Areas cut off from every other area stay lifted.
    pub fn with_schedule(mut self, scheduled_export: Vec<f64>) -> Self {
        assert_eq!(scheduled_export.len(), self.n_areas());
        self.scheduled_export = scheduled_export;
        self
    }

    pub fn without_line_limits(mut self) -> Self {
        self.enforce_line_limits = false;
        self
    }

    pub fn at_level(mut self, level: RelaxationLevel) -> Self {
        self.level = level;
        if level == RelaxationLevel::L2 {
            self.lifted.iter_mut().for_each(|l| *l = true);
        }
        self
    }

    /// Lifts the ACE rows of the given areas without moving on the ladder.
    pub fn lift_areas(mut self, areas: &[usize]) -> Self {
        for &a in areas {
            self.lifted[a] = true;
        }
        self
    }

    pub fn n_buses(&self) -> usize {
        self.topology.n_buses()
    }

    pub fn n_areas(&self) -> usize {
        self.scheduled_export.len()
    }

    /// Upper bound on `ds_j` at the current level.
    pub fn shed_cap(&self, j: usize) -> f64 {
        if self.level.allows_shedding() {
            self.demand[j].max(0.0)
        } else {
            0.0
        }
    }

    /// Whether area `a` has no line to any other area in the topology.
    pub fn is_isolated_area(&self, a: usize) -> bool {
        !self
            .topology
            .ends()
            .iter()
            .any(|&(i, k)| (self.area_of[i] == a) != (self.area_of[k] == a))
    }

    fn lift_isolated_areas(&mut self) {
        for a in 0..self.n_areas() {
            if self.is_isolated_area(a) {
                self.lifted[a] = true;
            }
        }
    }
}

/// Next rung of the ladder; unchanged at the top.
pub fn relax(problem: &ControlProblem) -> ControlProblem {
    match problem.level.next() {
        Some(level) => problem.clone().at_level(level),
        None => problem.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlStatus {
    Optimal,
    Infeasible,
}

/// Multipliers in the original (d, f, θ) form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlDuals {
    /// ν, one per bus balance row.
    pub balance: Vec<f64>,
    /// μ, one per area; zero on lifted rows.
    pub ace: Vec<f64>,
    pub line_upper: Vec<f64>,
    pub line_lower: Vec<f64>,
    pub gen_lower: Vec<f64>,
    pub gen_upper: Vec<f64>,
    pub shed_lower: Vec<f64>,
    pub shed_upper: Vec<f64>,
}

impl ControlDuals {
    /// Largest multiplier magnitude over all rows.
    pub fn max_abs(&self) -> f64 {
        [
            &self.balance,
            &self.ace,
            &self.line_upper,
            &self.line_lower,
            &self.gen_lower,
            &self.gen_upper,
            &self.shed_lower,
            &self.shed_upper,
        ]
        .iter()
        .flat_map(|v| v.iter())
        .fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSolution {
    pub status: ControlStatus,
    pub level: RelaxationLevel,
    pub line_limits: bool,
    /// dg* per bus. Empty when infeasible.
    pub gen_adjust: Vec<f64>,
    /// ds* per bus. Empty when infeasible.
    pub shed: Vec<f64>,
    pub flows: Vec<f64>,
    pub angles: Vec<f64>,
    pub objective: f64,
    pub duals: Option<ControlDuals>,
    pub kkt: Option<KktResiduals>,
    /// Phase-one minimum total violation, reported when infeasible.
    pub min_violation: Option<f64>,
    pub iterations: usize,
}

impl ControlSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == ControlStatus::Optimal
    }

    /// d* = dg* − ds*.
    pub fn adjustment(&self) -> Vec<f64> {
        self.gen_adjust.iter().zip(&self.shed).map(|(g, s)| g - s).collect()
    }

    pub fn total_shed(&self) -> f64 {
        self.shed.iter().sum()
    }

    fn infeasible(problem: &ControlProblem, min_violation: Option<f64>, iterations: usize) -> Self {
        Self {
            status: ControlStatus::Infeasible,
            level: problem.level,
            line_limits: problem.enforce_line_limits,
            gen_adjust: Vec::new(),
            shed: Vec::new(),
            flows: Vec::new(),
            angles: Vec::new(),
            objective: f64::NAN,
            duals: None,
            kkt: None,
            min_violation,
            iterations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub qp: QpOptions,
    /// Largest KKT residual accepted on an optimal point.
    pub kkt_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            qp: QpOptions::default(),
            kkt_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Gen,
    Shed,
}

/// The program with f and θ eliminated through injection-shift factors.
struct Reduced {
    program: QuadProgram,
    vars: Vec<(usize, Kind)>,
    /// Fixed part of d per bus.
    d_fixed: Vec<f64>,
    island_rows: usize,
    ace_areas: Vec<usize>,
    n_line_rows: usize,
    factor: LaplacianFactor,
    ptdf: DMatrix<f64>,
}

fn reduce(problem: &ControlProblem) -> Reduced {
    let topo = &problem.topology;
    let n = topo.n_buses();
    let factor = LaplacianFactor::new(topo);
    let ptdf = factor.ptdf(topo);

    let mut vars = Vec::new();
    let mut bounds = Vec::new();
    let mut weights = Vec::new();
    let mut d_fixed = vec![0.0; n];
    for j in 0..n {
        let (lo, hi) = problem.gen_bounds[j];
        if hi > lo {
            vars.push((j, Kind::Gen));
            bounds.push((lo, hi));
            weights.push(1.0 / problem.alpha_gen[j]);
        } else {
            d_fixed[j] += lo;
        }
        let cap = problem.shed_cap(j);
        if cap > 0.0 {
            vars.push((j, Kind::Shed));
            bounds.push((0.0, cap));
            weights.push(1.0 / problem.alpha_load[j]);
        }
    }
    let coeff = |kind: Kind| if kind == Kind::Gen { 1.0 } else { -1.0 };

    let mut equalities = Vec::new();
    for isl in factor.islands() {
        let coeffs = vars
            .iter()
            .enumerate()
            .filter(|(_, (j, _))| factor.island_of()[*j] == factor.island_of()[isl[0]])
            .map(|(k, &(_, kind))| (k, coeff(kind)))
            .collect();
        let rhs: f64 = isl.iter().map(|&j| problem.injections[j] - d_fixed[j]).sum();
        equalities.push(Row::new(coeffs, rhs));
    }
    let island_rows = equalities.len();
    let ace_areas: Vec<usize> = (0..problem.n_areas()).filter(|&a| !problem.lifted[a]).collect();
    for &a in &ace_areas {
        let coeffs = vars
            .iter()
            .enumerate()
            .filter(|(_, (j, _))| problem.area_of[*j] == a)
            .map(|(k, &(_, kind))| (k, coeff(kind)))
            .collect();
        let rhs: f64 = (0..n)
            .filter(|&j| problem.area_of[j] == a)
            .map(|j| problem.injections[j] - d_fixed[j])
            .sum::<f64>()
            - problem.scheduled_export[a];
        equalities.push(Row::new(coeffs, rhs));
    }

    let mut inequalities = Vec::new();
    if problem.enforce_line_limits {
        let p = DVector::from_iterator(n, (0..n).map(|j| problem.injections[j] - d_fixed[j]));
        let base = &ptdf * p;
        for (e, &lim) in topo.limits().iter().enumerate() {
            let coeffs: Vec<(usize, f64)> = vars
                .iter()
                .enumerate()
                .filter(|(_, (j, _))| ptdf[(e, *j)] != 0.0)
                .map(|(k, &(j, kind))| (k, coeff(kind) * ptdf[(e, j)]))
                .collect();
            let neg = coeffs.iter().map(|&(k, a)| (k, -a)).collect();
            inequalities.push(Row::new(coeffs, base[e] - lim));
            inequalities.push(Row::new(neg, -base[e] - lim));
        }
    }
    let n_line_rows = inequalities.len();
    for (k, &(lo, hi)) in bounds.iter().enumerate() {
        inequalities.push(Row::new(vec![(k, 1.0)], lo));
        inequalities.push(Row::new(vec![(k, -1.0)], -hi));
    }

    let program = QuadProgram {
        hessian: DMatrix::from_diagonal(&DVector::from_vec(weights)),
        linear: DVector::zeros(vars.len()),
        equalities,
        inequalities,
    };
    Reduced {
        program,
        vars,
        d_fixed,
        island_rows,
        ace_areas,
        n_line_rows,
        factor,
        ptdf,
    }
}

/// A program with no free variables is just a consistency check.
fn solve_trivial(program: &QuadProgram, tol: f64) -> QpOutcome {
    let meq = program.equalities.len();
    for (k, row) in program.equalities.iter().enumerate() {
        if row.rhs.abs() > tol * row.rhs.abs().max(1.0) {
            return QpOutcome::Infeasible { blocking: k };
        }
    }
    for (k, row) in program.inequalities.iter().enumerate() {
        if row.rhs > tol * row.rhs.abs().max(1.0) {
            return QpOutcome::Infeasible { blocking: meq + k };
        }
    }
    QpOutcome::Optimal(QpSolution {
        x: Vec::new(),
        eq_duals: vec![0.0; meq],
        ineq_duals: vec![0.0; program.inequalities.len()],
        objective: 0.0,
        iterations: 0,
    })
}

/// Minimum total violation of the balance, Kirchhoff and ACE rows with the
/// line and control boxes held hard, posed on the original variables.
pub fn phase_one(problem: &ControlProblem) -> Option<f64> {
    let topo = &problem.topology;
    let n = topo.n_buses();
    let m = topo.n_lines();
    let free = (f64::NEG_INFINITY, f64::INFINITY);
    // Layout: dg (n), ds (n), f (m), θ (n).
    let (dg, ds, fl, th) = (0, n, 2 * n, 2 * n + m);
    let mut bounds = Vec::with_capacity(3 * n + m);
    bounds.extend(problem.gen_bounds.iter().copied());
    bounds.extend((0..n).map(|j| (0.0, problem.shed_cap(j))));
    bounds.extend(topo.limits().iter().map(|&l| if problem.enforce_line_limits { (-l, l) } else { free }));
    bounds.extend((0..n).map(|_| free));
    for isl in crate::network::islands(topo) {
        bounds[th + isl[isl.len() - 1]] = (0.0, 0.0);
    }

    let mut rows: Vec<Row> = (0..n)
        .map(|j| Row::new(vec![(dg + j, 1.0), (ds + j, -1.0)], problem.injections[j]))
        .collect();
    for (e, &(i, k)) in topo.ends().iter().enumerate() {
        rows[i].coeffs.push((fl + e, 1.0));
        rows[k].coeffs.push((fl + e, -1.0));
    }
    for (e, (&(i, k), &b)) in topo.ends().iter().zip(topo.susceptance()).enumerate() {
        rows.push(Row::new(vec![(fl + e, 1.0), (th + i, -b), (th + k, b)], 0.0));
    }
    for a in (0..problem.n_areas()).filter(|&a| !problem.lifted[a]) {
        let mut coeffs = Vec::new();
        for (e, &(i, k)) in topo.ends().iter().enumerate() {
            let v = (problem.area_of[i] == a) as i32 - (problem.area_of[k] == a) as i32;
            if v != 0 {
                coeffs.push((fl + e, v as f64));
            }
        }
        rows.push(Row::new(coeffs, problem.scheduled_export[a]));
    }
    min_violation(&bounds, &rows, &[]).map(|c| c.min_violation)
}

/// Solves the problem as posed (line limits per `enforce_line_limits`).
pub fn solve(problem: &ControlProblem, opts: &SolveOptions) -> Result<ControlSolution, ControlError> {
    let n = problem.n_buses();
    let red = reduce(problem);
    let outcome = if red.vars.is_empty() {
        solve_trivial(&red.program, opts.qp.feasibility_tol)
    } else {
        match qp::solve(&red.program, &opts.qp) {
            Ok(o) => o,
            Err(QpError::IterationLimit(k)) => {
                return Err(ControlError::SolverStall(format!("no convergence after {k} iterations")))
            }
            Err(e) => return Err(ControlError::SolverStall(e.to_string())),
        }
    };
    let sol = match outcome {
        QpOutcome::Optimal(s) => s,
        QpOutcome::Infeasible { .. } => {
            return Ok(ControlSolution::infeasible(problem, phase_one(problem), 0));
        }
    };

    let mut gen_adjust = vec![0.0; n];
    let mut shed = vec![0.0; n];
    for j in 0..n {
        gen_adjust[j] = red.d_fixed[j];
    }
    for (&(j, kind), &x) in red.vars.iter().zip(&sol.x) {
        match kind {
            Kind::Gen => gen_adjust[j] = x,
            Kind::Shed => shed[j] = x,
        }
    }
    let post: Vec<f64> = (0..n)
        .map(|j| problem.injections[j] - gen_adjust[j] + shed[j])
        .collect();
    let angles = red.factor.solve_grounded(&post);
    let flows = problem.topology.flows_from_angles(&angles);

    // Back to the original multipliers.
    let m = problem.topology.n_lines();
    let mut mu_tilde = vec![0.0; problem.n_areas()];
    for (r, &a) in red.ace_areas.iter().enumerate() {
        mu_tilde[a] = sol.eq_duals[red.island_rows + r];
    }
    let (mut up, mut down) = (vec![0.0; m], vec![0.0; m]);
    if problem.enforce_line_limits {
        for e in 0..m {
            up[e] = sol.ineq_duals[2 * e];
            down[e] = sol.ineq_duals[2 * e + 1];
        }
    }
    let delta = DVector::from_iterator(m, (0..m).map(|e| up[e] - down[e]));
    let through_lines = red.ptdf.transpose() * delta;
    let balance: Vec<f64> = (0..n)
        .map(|j| {
            let beta = sol.eq_duals[red.factor.island_of()[j]];
            -(beta + mu_tilde[problem.area_of[j]] + through_lines[j])
        })
        .collect();
    let mut duals = ControlDuals {
        balance,
        ace: mu_tilde.iter().map(|v| -v).collect(),
        line_upper: up,
        line_lower: down,
        gen_lower: vec![0.0; n],
        gen_upper: vec![0.0; n],
        shed_lower: vec![0.0; n],
        shed_upper: vec![0.0; n],
    };
    for (k, &(j, kind)) in red.vars.iter().enumerate() {
        let lo = sol.ineq_duals[red.n_line_rows + 2 * k];
        let hi = sol.ineq_duals[red.n_line_rows + 2 * k + 1];
        match kind {
            Kind::Gen => {
                duals.gen_lower[j] = lo;
                duals.gen_upper[j] = hi;
            }
            Kind::Shed => {
                duals.shed_lower[j] = lo;
                duals.shed_upper[j] = hi;
            }
        }
    }
    let objective = (0..n)
        .map(|j| {
            gen_adjust[j].powi(2) / (2.0 * problem.alpha_gen[j]) + shed[j].powi(2) / (2.0 * problem.alpha_load[j])
        })
        .sum();

    let mut out = ControlSolution {
        status: ControlStatus::Optimal,
        level: problem.level,
        line_limits: problem.enforce_line_limits,
        gen_adjust,
        shed,
        flows,
        angles,
        objective,
        duals: Some(duals),
        kkt: None,
        min_violation: None,
        iterations: sol.iterations,
    };
    let kkt = control_residuals(problem, &out).expect("optimal solutions carry duals");
    if !kkt.passes(opts.kkt_tol) {
        return Err(ControlError::SolverStall(format!(
            "KKT residual {:.2e} above {:.0e}",
            kkt.max(),
            opts.kkt_tol
        )));
    }
    out.kkt = Some(kkt);
    Ok(out)
}

/// Solves with line limits enforced.
pub fn solve_uc(problem: &ControlProblem) -> Result<ControlSolution, ControlError> {
    let mut p = problem.clone();
    p.enforce_line_limits = true;
    solve(&p, &SolveOptions::default())
}

/// Solves with line limits dropped.
pub fn solve_agc(problem: &ControlProblem) -> Result<ControlSolution, ControlError> {
    solve(&problem.clone().without_line_limits(), &SolveOptions::default())
}

/// Solves at the problem's level and climbs the ladder while infeasible.
/// Returns the first optimal solution.
pub fn mitigate_problem(
    problem: &ControlProblem,
    opts: &SolveOptions,
) -> Result<(ControlSolution, RelaxationLevel), ControlError> {
    let mut current = problem.clone();
    loop {
        let sol = solve(&current, opts)?;
        if sol.is_optimal() {
            return Ok((sol, current.level));
        }
        if current.level == RelaxationLevel::L2 {
            return Err(ControlError::LadderExhausted);
        }
        current = relax(&current);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MitigationConfig {
    pub line_limits: bool,
    pub start: RelaxationLevel,
    pub solve: SolveOptions,
}

impl Default for MitigationConfig {
    fn default() -> Self {
        Self {
            line_limits: true,
            start: RelaxationLevel::L0,
            solve: SolveOptions::default(),
        }
    }
}

/// Ladder mitigation around the grid's nominal dispatch.
pub fn mitigate(
    grid: &GridCase,
    topology: &Topology,
    config: &MitigationConfig,
) -> Result<(ControlSolution, RelaxationLevel), ControlError> {
    let mut problem = ControlProblem::nominal(grid, topology.clone()).at_level(config.start);
    problem.enforce_line_limits = config.line_limits;
    mitigate_problem(&problem, &config.solve)
}
