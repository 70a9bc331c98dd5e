//! The 39-bus two-area demonstration: single failures on the tree-connected
//! system, mitigated in steady state and simulated under the unified
//! controller with the dual-divergence monitor.

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::control::{mitigate, ControlProblem, MitigationConfig, RelaxationLevel};
use crate::dynamics::{simulate, Controller, Detector, Event, Scenario, SimOptions, Trajectory, UcDynamics};
use crate::network::{dc_power_flow, GridCase, LineId};
use crate::partition::{keep_largest_flow, Partition};

/// Failures shown in the demonstration, by bus id.
pub const DEMO_FAILURES: [(u32, u32); 2] = [(4, 14), (6, 7)];

/// Line watched for localization, by bus id.
pub const DEMO_WATCHED: (u32, u32) = (25, 26);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    pub dual_threshold: f64,
    pub horizon: f64,
    pub dt: f64,
    pub output_interval: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            dual_threshold: 0.5,
            horizon: 60.0,
            dt: 1e-3,
            output_interval: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRun {
    pub failure: (u32, u32),
    /// Lowest ladder level whose steady-state program is feasible.
    pub level: RelaxationLevel,
    pub shed: f64,
    /// Steady-state d per bus.
    pub control: Vec<f64>,
    /// Largest |dual| of the steady-state solution.
    pub steady_max_dual: f64,
    pub warning_time: Option<f64>,
    /// Largest monitored |dual| during the simulation.
    pub max_dual: f64,
    pub final_level: Option<RelaxationLevel>,
    /// Flow on the watched line before the failure and at steady state.
    pub watched_before: Option<f64>,
    pub watched_after: Option<f64>,
    pub events: Vec<Event>,
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
}

impl DemoRun {
    pub fn severe(&self) -> bool {
        self.warning_time.is_some()
    }
}

/// The demonstration grid: areas from the case, with every tie line but the
/// one of largest nominal flow switched off.
pub fn demo_grid(grid: &GridCase) -> Result<(GridCase, Partition), HarnessError> {
    let topo = grid.topology();
    let mut partition = Partition::from_grid(grid);
    partition.validate(&topo)?;
    let off = keep_largest_flow(&topo, &grid.injections(), &partition)?;
    partition = partition.with_switched_off(off);
    Ok((partition.apply(grid), partition))
}

fn line_by_ends(grid: &GridCase, ends: (u32, u32)) -> Result<LineId, HarnessError> {
    grid.find_line(ends.0, ends.1)
        .ok_or_else(|| HarnessError::Config(format!("no line ({}, {}) in {}", ends.0, ends.1, grid.name)))
}

/// Runs one failure on the tree-connected grid from [`demo_grid`].
pub fn run_demo_failure(tree: &GridCase, failure: (u32, u32), config: &DemoConfig) -> Result<DemoRun, HarnessError> {
    if !(config.dual_threshold > 0.0) {
        return Err(HarnessError::Config("dual threshold must be positive".into()));
    }
    let id = line_by_ends(tree, failure)?;
    let before = tree.topology();
    if before.position(id).is_none() {
        return Err(HarnessError::Config(format!("line {} is switched off", tree.line_label(id))));
    }
    let after = before.without(&[id]);
    let watched = tree.find_line(DEMO_WATCHED.0, DEMO_WATCHED.1);
    let pre = dc_power_flow(&before, &tree.injections())?.flows;

    let (sol, level) = mitigate(tree, &after, &MitigationConfig::default())?;
    let watched_before = watched.and_then(|w| before.position(w)).map(|k| pre[k]);
    let watched_after = watched.and_then(|w| after.position(w)).map(|k| sol.flows[k]);

    let mut uc = UcDynamics::new(ControlProblem::nominal(tree, after.clone()));
    uc.detector = Some(Detector {
        threshold: config.dual_threshold,
        ..Detector::default()
    });
    let scenario = Scenario::line_failure(tree, &after)?;
    let opts = SimOptions {
        horizon: config.horizon,
        dt: config.dt,
        output_interval: config.output_interval,
        ..SimOptions::default()
    };
    let traj = simulate(tree, &after, &scenario, &Controller::Unified(uc), &opts)?;
    Ok(DemoRun {
        failure,
        level,
        shed: sol.total_shed(),
        control: sol.adjustment(),
        steady_max_dual: sol.duals.as_ref().map_or(0.0, |d| d.max_abs()),
        warning_time: traj.first_warning(),
        max_dual: traj.max_dual,
        final_level: traj.final_level,
        watched_before,
        watched_after,
        events: traj.events.clone(),
        trajectory: Some(traj),
    })
}

/// Both demonstration failures.
pub fn run_demo(grid: &GridCase, config: &DemoConfig) -> Result<Vec<DemoRun>, HarnessError> {
    let (tree, _) = demo_grid(grid)?;
    DEMO_FAILURES
        .iter()
        .map(|&f| run_demo_failure(&tree, f, config))
        .collect()
}
