//! Staged cascading-failure simulation.
//!
//! Stage k removes the tripped set E(k), rebalances injections on the
//! surviving topology with a [`BalancingRule`], solves the DC flow, and trips
//! every strictly overloaded line at stage k+1.

mod rules;

pub use rules::{proportional_balance, AgcRule, DroopRule, ProportionalRule, UcRule};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControlStatus, RelaxationLevel};
use crate::network::{check_limits_tol, dc_power_flow_with, GridCase, LineId, NetworkError, Topology};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CascadeError {
    #[error("no initial failures given")]
    NoInitialFailure,
    #[error("initial failure {0} is not in service")]
    NotInService(LineId),
    #[error("max_stages must be at least 1")]
    ZeroStages,
    #[error("balancing rule failed at stage {stage}: {reason}")]
    RuleFailure { stage: usize, reason: String },
    #[error("island {island} has no adjustable injection but is off by {imbalance:.3e}")]
    DegenerateIsland { island: usize, imbalance: f64 },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Generation and demand per bus; injections are their difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub generation: Vec<f64>,
    pub demand: Vec<f64>,
}

impl OperatingPoint {
    pub fn nominal(grid: &GridCase) -> Self {
        Self {
            generation: grid.buses.iter().map(|b| b.generation).collect(),
            demand: grid.buses.iter().map(|b| b.demand).collect(),
        }
    }

    pub fn injections(&self) -> Vec<f64> {
        self.generation.iter().zip(&self.demand).map(|(g, d)| g - d).collect()
    }

    /// Net exports per area.
    pub fn area_exports(&self, grid: &GridCase) -> Vec<f64> {
        let mut out = vec![0.0; grid.n_areas()];
        for (bus, p) in grid.buses.iter().zip(self.injections()) {
            out[bus.area] += p;
        }
        out
    }
}

/// What a rule sees at one stage.
#[derive(Debug, Clone, Copy)]
pub struct StageContext<'a> {
    pub grid: &'a GridCase,
    /// Post-failure topology.
    pub topology: &'a Topology,
    pub point: &'a OperatingPoint,
    /// Area exports before the cascade started.
    pub schedule: &'a [f64],
    pub stage: usize,
}

/// Per-bus action chosen by a rule: generation drops by `gen_adjust`, demand
/// drops by `shed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjustment {
    pub gen_adjust: Vec<f64>,
    pub shed: Vec<f64>,
    pub diagnostics: Option<ControlDiagnostics>,
}

impl Adjustment {
    pub fn none(n: usize) -> Self {
        Self {
            gen_adjust: vec![0.0; n],
            shed: vec![0.0; n],
            diagnostics: None,
        }
    }
}

/// Summary of a controller-based rule's solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlDiagnostics {
    pub status: ControlStatus,
    pub level: RelaxationLevel,
    pub objective: f64,
    pub kkt_max: f64,
    pub iterations: usize,
    /// Levels tried before the one that succeeded.
    pub infeasible_levels: Vec<RelaxationLevel>,
}

pub trait BalancingRule: Sync {
    fn name(&self) -> &'static str;
    fn adjust(&self, ctx: &StageContext<'_>) -> Result<Adjustment, CascadeError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub index: usize,
    /// E(k).
    pub tripped: Vec<LineId>,
    pub surviving: Vec<LineId>,
    pub generation: Vec<f64>,
    pub demand: Vec<f64>,
    pub injections: Vec<f64>,
    /// Per surviving line, in `surviving` order.
    pub flows: Vec<f64>,
    /// Lines over their limit; they trip at the next stage.
    pub overloaded: Vec<LineId>,
    pub diagnostics: Option<ControlDiagnostics>,
}

impl Stage {
    pub fn topology(&self, grid: &GridCase) -> Topology {
        Topology::new(grid, self.surviving.iter().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminalStatus {
    Terminated,
    MaxStagesExceeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeTrace {
    pub rule: String,
    pub initial: OperatingPoint,
    pub stages: Vec<Stage>,
    pub status: TerminalStatus,
}

impl CascadeTrace {
    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn last(&self) -> &Stage {
        self.stages.last().expect("a trace has at least one stage")
    }

    /// Demand lost over the whole cascade.
    pub fn total_shed(&self) -> f64 {
        let before: f64 = self.initial.demand.iter().sum();
        let after: f64 = self.last().demand.iter().sum();
        before - after
    }

    /// Final minus initial generation, per bus.
    pub fn generation_change(&self) -> Vec<f64> {
        self.last()
            .generation
            .iter()
            .zip(&self.initial.generation)
            .map(|(a, b)| a - b)
            .collect()
    }

    /// Highest relaxation level any stage needed.
    pub fn max_level(&self) -> Option<RelaxationLevel> {
        self.stages.iter().filter_map(|s| s.diagnostics.as_ref().map(|d| d.level)).max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeOptions {
    pub max_stages: usize,
    /// A line trips when |f| > π + trip_tol.
    pub trip_tol: f64,
    /// Island balance tolerance for the flow solve after rebalancing.
    pub balance_tol: f64,
}

impl Default for CascadeOptions {
    fn default() -> Self {
        Self {
            max_stages: 100,
            trip_tol: 1e-7,
            balance_tol: 1e-7,
        }
    }
}

/// Runs a cascade from the grid's nominal operating point.
pub fn run_cascade(
    grid: &GridCase,
    initial_failures: &[LineId],
    rule: &dyn BalancingRule,
    max_stages: usize,
) -> Result<CascadeTrace, CascadeError> {
    let opts = CascadeOptions {
        max_stages,
        ..CascadeOptions::default()
    };
    run_cascade_from(grid, &grid.topology(), OperatingPoint::nominal(grid), initial_failures, rule, &opts)
}

/// Runs a cascade on `topology` (e.g. after tie-line switching) from `start`.
pub fn run_cascade_from(
    grid: &GridCase,
    topology: &Topology,
    start: OperatingPoint,
    initial_failures: &[LineId],
    rule: &dyn BalancingRule,
    opts: &CascadeOptions,
) -> Result<CascadeTrace, CascadeError> {
    if initial_failures.is_empty() {
        return Err(CascadeError::NoInitialFailure);
    }
    if opts.max_stages == 0 {
        return Err(CascadeError::ZeroStages);
    }
    if let Some(&bad) = initial_failures.iter().find(|id| !topology.contains(**id)) {
        return Err(CascadeError::NotInService(bad));
    }
    let schedule = start.area_exports(grid);
    let mut point = start.clone();
    let mut current = topology.clone();
    let mut tripped: Vec<LineId> = initial_failures.to_vec();
    let mut stages = Vec::new();
    loop {
        let index = stages.len() + 1;
        current = current.without(&tripped);
        let ctx = StageContext {
            grid,
            topology: &current,
            point: &point,
            schedule: &schedule,
            stage: index,
        };
        let adj = rule.adjust(&ctx)?;
        for j in 0..grid.n_buses() {
            point.generation[j] -= adj.gen_adjust[j];
            point.demand[j] -= adj.shed[j];
        }
        let injections = point.injections();
        let state = dc_power_flow_with(&current, &injections, opts.balance_tol).map_err(|e| {
            CascadeError::RuleFailure {
                stage: index,
                reason: format!("rule left an unbalanced island: {e}"),
            }
        })?;
        let overloaded = check_limits_tol(&state, &current, opts.trip_tol);
        stages.push(Stage {
            index,
            tripped: std::mem::take(&mut tripped),
            surviving: current.ids().to_vec(),
            generation: point.generation.clone(),
            demand: point.demand.clone(),
            injections,
            flows: state.flows,
            overloaded: overloaded.clone(),
            diagnostics: adj.diagnostics,
        });
        if overloaded.is_empty() {
            return Ok(trace(rule, start, stages, TerminalStatus::Terminated));
        }
        if index >= opts.max_stages {
            return Ok(trace(rule, start, stages, TerminalStatus::MaxStagesExceeded));
        }
        tripped = overloaded;
    }
}

fn trace(rule: &dyn BalancingRule, initial: OperatingPoint, stages: Vec<Stage>, status: TerminalStatus) -> CascadeTrace {
    CascadeTrace {
        rule: rule.name().to_string(),
        initial,
        stages,
        status,
    }
}
