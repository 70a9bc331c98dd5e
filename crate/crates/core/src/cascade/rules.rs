use super::{Adjustment, BalancingRule, CascadeError, ControlDiagnostics, StageContext};
use crate::control::{solve, ControlProblem, RelaxationLevel, SolveOptions};
use crate::dynamics::droop_equilibrium_at;
use crate::network::{islands, Topology, BALANCE_TOL};

/// Spreads each island's imbalance over its buses in proportion to α_j + D_j.
/// A connected network keeps its injections.
pub fn proportional_balance(
    p_prev: &[f64],
    topology: &Topology,
    alpha: &[f64],
    damping: &[f64],
) -> Result<Vec<f64>, CascadeError> {
    let comps = islands(topology);
    let mut p = p_prev.to_vec();
    if comps.len() <= 1 {
        return Ok(p);
    }
    for (island, comp) in comps.iter().enumerate() {
        let imbalance: f64 = comp.iter().map(|&j| p_prev[j]).sum();
        if imbalance == 0.0 {
            continue;
        }
        let weight: f64 = comp.iter().map(|&j| alpha[j] + damping[j]).sum();
        if !(weight > 0.0) {
            if imbalance.abs() > BALANCE_TOL {
                return Err(CascadeError::DegenerateIsland { island, imbalance });
            }
            continue;
        }
        for &j in comp {
            p[j] -= (alpha[j] + damping[j]) / weight * imbalance;
        }
    }
    Ok(p)
}

/// Zeroes every island that `proportional_balance` cannot rebalance.
fn clear_degenerate(ctx: &StageContext<'_>, adj: &mut Adjustment) {
    let grid = ctx.grid;
    for comp in islands(ctx.topology) {
        let weight: f64 = comp.iter().map(|&j| grid.buses[j].alpha + grid.buses[j].damping).sum();
        let imbalance: f64 = comp
            .iter()
            .map(|&j| ctx.point.generation[j] - ctx.point.demand[j])
            .sum();
        if !(weight > 0.0) && imbalance.abs() > BALANCE_TOL {
            for &j in &comp {
                adj.gen_adjust[j] = ctx.point.generation[j];
                adj.shed[j] = ctx.point.demand[j];
            }
        }
    }
}

/// Rule R_c: proportional sharing with the grid's α and D.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProportionalRule;

impl BalancingRule for ProportionalRule {
    fn name(&self) -> &'static str {
        "proportional"
    }

    fn adjust(&self, ctx: &StageContext<'_>) -> Result<Adjustment, CascadeError> {
        let grid = ctx.grid;
        let n = grid.n_buses();
        let p = ctx.point.injections();
        let alpha: Vec<f64> = grid.buses.iter().map(|b| b.alpha).collect();
        let damping: Vec<f64> = grid.buses.iter().map(|b| b.damping).collect();
        let mut adj = Adjustment::none(n);
        match proportional_balance(&p, ctx.topology, &alpha, &damping) {
            Ok(next) => {
                for j in 0..n {
                    adj.gen_adjust[j] = p[j] - next[j];
                }
            }
            Err(CascadeError::DegenerateIsland { .. }) => clear_degenerate(ctx, &mut adj),
            Err(e) => return Err(e),
        }
        Ok(adj)
    }
}

/// Steady state of droop control: the droop response plus the damping
/// response of every island.
#[derive(Debug, Clone, Copy, Default)]
pub struct DroopRule;

impl BalancingRule for DroopRule {
    fn name(&self) -> &'static str {
        "droop"
    }

    fn adjust(&self, ctx: &StageContext<'_>) -> Result<Adjustment, CascadeError> {
        let n = ctx.grid.n_buses();
        let mut adj = Adjustment::none(n);
        match droop_equilibrium_at(ctx.grid, ctx.topology, &ctx.point.injections()) {
            Ok(eq) => {
                for j in 0..n {
                    adj.gen_adjust[j] = eq.control[j] + eq.damping_response[j];
                }
            }
            Err(_) => clear_degenerate(ctx, &mut adj),
        }
        Ok(adj)
    }
}

fn controller_adjust(
    ctx: &StageContext<'_>,
    line_limits: bool,
    start: RelaxationLevel,
    opts: &SolveOptions,
) -> Result<Adjustment, CascadeError> {
    let mut problem = ControlProblem::new(
        ctx.grid,
        ctx.topology.clone(),
        ctx.point.generation.clone(),
        ctx.point.demand.clone(),
    )
    .with_schedule(ctx.schedule.to_vec())
    .at_level(start);
    problem.enforce_line_limits = line_limits;
    let mut infeasible_levels = Vec::new();
    loop {
        let sol = solve(&problem, opts).map_err(|e| CascadeError::RuleFailure {
            stage: ctx.stage,
            reason: e.to_string(),
        })?;
        if sol.is_optimal() {
            return Ok(Adjustment {
                diagnostics: Some(ControlDiagnostics {
                    status: sol.status,
                    level: problem.level,
                    objective: sol.objective,
                    kkt_max: sol.kkt.map_or(0.0, |k| k.max()),
                    iterations: sol.iterations,
                    infeasible_levels,
                }),
                gen_adjust: sol.gen_adjust,
                shed: sol.shed,
            });
        }
        infeasible_levels.push(problem.level);
        match problem.level.next() {
            Some(level) => problem = problem.at_level(level),
            None => {
                return Err(CascadeError::RuleFailure {
                    stage: ctx.stage,
                    reason: "relaxation ladder exhausted".into(),
                })
            }
        }
    }
}

/// Unified controller: the steady-state control program with line limits,
/// climbing the relaxation ladder when infeasible.
#[derive(Debug, Clone, Copy)]
pub struct UcRule {
    pub start: RelaxationLevel,
    pub solve: SolveOptions,
}

impl Default for UcRule {
    fn default() -> Self {
        Self {
            start: RelaxationLevel::L0,
            solve: SolveOptions::default(),
        }
    }
}

impl BalancingRule for UcRule {
    fn name(&self) -> &'static str {
        "uc"
    }

    fn adjust(&self, ctx: &StageContext<'_>) -> Result<Adjustment, CascadeError> {
        controller_adjust(ctx, true, self.start, &self.solve)
    }
}

/// AGC: the same program and ladder without line limits.
#[derive(Debug, Clone, Copy)]
pub struct AgcRule {
    pub start: RelaxationLevel,
    pub solve: SolveOptions,
}

impl Default for AgcRule {
    fn default() -> Self {
        Self {
            start: RelaxationLevel::L0,
            solve: SolveOptions::default(),
        }
    }
}

impl BalancingRule for AgcRule {
    fn name(&self) -> &'static str {
        "agc"
    }

    fn adjust(&self, ctx: &StageContext<'_>) -> Result<Adjustment, CascadeError> {
        controller_adjust(ctx, false, self.start, &self.solve)
    }
}
