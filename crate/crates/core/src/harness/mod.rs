//! Single-line contingency sweeps over the four mitigation strategies.
//!
//! A sweep dispatches the grid once with a DC OPF, then for every scaling
//! factor α, every strategy and every in-service line runs the cascade that
//! follows the loss of that line, and records the load loss rate (LLR) and
//! the adjusted generator rate (AGR).

mod demo;
mod opf;
mod report;

pub use demo::{demo_grid, run_demo, run_demo_failure, DemoConfig, DemoRun, DEMO_FAILURES, DEMO_WATCHED};
pub use opf::{dc_opf, dc_opf_program, scale_limits, OpfSolution};
pub use report::{aggregate, write_outputs, Aggregate, OutputMeta, SweepReport, SCENARIO_COLUMNS};

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{
    run_cascade_from, AgcRule, BalancingRule, CascadeOptions, OperatingPoint, TerminalStatus, UcRule,
};
use crate::control::qp::QpError;
use crate::control::RelaxationLevel;
use crate::network::{GridCase, LineId, NetworkError, Topology};
use crate::partition::{is_spanning_tree, reduced_graph, Partition, PartitionError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("DC OPF infeasible: {0}")]
    OpfInfeasible(String),
    #[error("total demand is zero")]
    ZeroDemand,
    #[error("tie lines left in service do not form a tree of areas")]
    NotTreeConnected,
    #[error("invalid sweep configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Control(#[from] crate::control::ControlError),
    #[error(transparent)]
    Dynamics(#[from] crate::dynamics::DynamicsError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    Uc,
    Agc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    /// Surplus tie lines switched off.
    Tree,
    /// Every line in service.
    Mesh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Strategy {
    pub controller: Controller,
    pub structure: Structure,
}

impl Strategy {
    /// S1 to S4.
    pub const ALL: [Strategy; 4] = [
        Strategy::new(Controller::Uc, Structure::Tree),
        Strategy::new(Controller::Uc, Structure::Mesh),
        Strategy::new(Controller::Agc, Structure::Tree),
        Strategy::new(Controller::Agc, Structure::Mesh),
    ];

    pub const fn new(controller: Controller, structure: Structure) -> Self {
        Self { controller, structure }
    }

    /// "S1" to "S4".
    pub fn code(&self) -> &'static str {
        match (self.controller, self.structure) {
            (Controller::Uc, Structure::Tree) => "S1",
            (Controller::Uc, Structure::Mesh) => "S2",
            (Controller::Agc, Structure::Tree) => "S3",
            (Controller::Agc, Structure::Mesh) => "S4",
        }
    }

    /// Table heading, e.g. "UC + Tree".
    pub fn title(&self) -> &'static str {
        match (self.controller, self.structure) {
            (Controller::Uc, Structure::Tree) => "UC + Tree",
            (Controller::Uc, Structure::Mesh) => "UC + Mesh",
            (Controller::Agc, Structure::Tree) => "AGC + Tree",
            (Controller::Agc, Structure::Mesh) => "AGC + Mesh",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self.controller {
            Controller::Uc => "uc",
            Controller::Agc => "agc",
        };
        let s = match self.structure {
            Structure::Tree => "tree",
            Structure::Mesh => "mesh",
        };
        write!(f, "{c}-{s}")
    }
}

impl FromStr for Strategy {
    type Err = String;

    /// Accepts `uc-tree` style labels and `S1`..`S4`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        Strategy::ALL
            .into_iter()
            .find(|st| st.to_string() == t || st.code().eq_ignore_ascii_case(&t))
            .ok_or_else(|| format!("unknown strategy '{s}' (expected uc-tree, uc-mesh, agc-tree, agc-mesh)"))
    }
}

/// Load loss rate: shed demand over pre-failure demand.
pub fn llr(pre_demand: &[f64], post_served: &[f64]) -> Result<f64, HarnessError> {
    let total: f64 = pre_demand.iter().sum();
    if !(total > 0.0) {
        return Err(HarnessError::ZeroDemand);
    }
    let served: f64 = post_served.iter().sum();
    Ok(((total - served) / total).clamp(0.0, 1.0))
}

/// Adjusted generator rate: share of generators whose output moved by more
/// than `tol`. Empty input gives 0.
pub fn agr(generation_change: &[f64], tol: f64) -> f64 {
    if generation_change.is_empty() {
        return 0.0;
    }
    let moved = generation_change.iter().filter(|d| d.abs() > tol).count();
    moved as f64 / generation_change.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub strategies: Vec<Strategy>,
    pub alphas: Vec<f64>,
    pub max_stages: usize,
    /// A generator counts as adjusted when |Δg| exceeds this, pu.
    pub agr_tol: f64,
    /// LLR at or below this counts as zero in the report.
    pub llr_tol: f64,
    /// Worker threads; `None` uses the global pool. Not serialized, since
    /// results do not depend on it.
    #[serde(skip)]
    pub workers: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            alphas: vec![0.5, 1.0, 1.5],
            max_stages: 100,
            agr_tol: 1e-4,
            llr_tol: 1e-6,
            workers: None,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.strategies.is_empty() {
            return Err(HarnessError::Config("no strategies".into()));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(HarnessError::Config("scaling factors must be positive".into()));
        }
        if self.max_stages == 0 {
            return Err(HarnessError::Config("max_stages must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(HarnessError::Config("workers must be at least 1".into()));
        }
        if !(self.agr_tol >= 0.0 && self.llr_tol >= 0.0) {
            return Err(HarnessError::Config("tolerances must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioStatus {
    Ok,
    Errored,
}

/// One (initial failure, strategy, α) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub line: LineId,
    pub from_bus: u32,
    pub to_bus: u32,
    pub strategy: Strategy,
    pub alpha: f64,
    pub status: ScenarioStatus,
    pub llr: f64,
    pub agr: f64,
    pub stages: usize,
    /// Highest ladder level any stage needed.
    pub level: Option<RelaxationLevel>,
    /// The first stage could not be solved by generation alone.
    pub severe: bool,
    /// Cascade ended with no overloaded line within the stage budget.
    pub terminated: bool,
    /// Buses outside the areas touched by the initial failure whose
    /// generation or demand changed.
    pub nonlocal_adjustments: usize,
    /// An isolated area had its ACE row lifted at the first stage.
    pub ace_lifted: bool,
    pub error: Option<String>,
}

impl ScenarioResult {
    fn errored(base: ScenarioResult, error: String) -> Self {
        Self {
            status: ScenarioStatus::Errored,
            error: Some(error),
            ..base
        }
    }
}

/// Everything a sweep produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub nominal: OpfSolution,
    /// Sorted by α, then strategy order of the config, then line.
    pub scenarios: Vec<ScenarioResult>,
    pub report: SweepReport,
}

struct Prepared<'a> {
    grid: &'a GridCase,
    partition: &'a Partition,
    nominal: &'a OpfSolution,
    generators: Vec<usize>,
}

/// Runs every (α, strategy, line) scenario.
///
/// `partition` carries the areas and, for tree strategies, the tie lines to
/// switch off; those lines are not used as initial failures under tree
/// strategies. The same OPF dispatch on the unscaled mesh network feeds
/// every strategy and α.
pub fn run_sweep(grid: &GridCase, partition: &Partition, config: &SweepConfig) -> Result<Sweep, HarnessError> {
    config.validate()?;
    let topo = grid.topology();
    partition.validate(&topo)?;
    let grid = Partition::new(partition.area_of.clone()).apply(grid);
    if config.strategies.iter().any(|s| s.structure == Structure::Tree) {
        let kept: Vec<(usize, usize)> = reduced_graph(&topo, partition)
            .into_iter()
            .filter(|(id, ..)| !partition.switched_off.contains(id))
            .map(|(_, a, b)| (a, b))
            .collect();
        if !is_spanning_tree(partition.n_areas(), &kept) {
            return Err(HarnessError::NotTreeConnected);
        }
    }
    let nominal = dc_opf(&grid)?;
    let prepared = Prepared {
        grid: &grid,
        partition,
        nominal: &nominal,
        generators: (0..grid.n_buses()).filter(|&j| grid.buses[j].is_generator()).collect(),
    };

    let mut jobs = Vec::new();
    for &alpha in &config.alphas {
        for &strategy in &config.strategies {
            let lines: Vec<LineId> = match strategy.structure {
                Structure::Mesh => topo.ids().to_vec(),
                Structure::Tree => topo
                    .ids()
                    .iter()
                    .copied()
                    .filter(|id| !partition.switched_off.contains(id))
                    .collect(),
            };
            jobs.extend(lines.into_iter().map(|line| (alpha, strategy, line)));
        }
    }
    let scaled: Vec<(f64, GridCase)> = config.alphas.iter().map(|&a| (a, scale_limits(&grid, a))).collect();
    let run = || -> Vec<ScenarioResult> {
        jobs.par_iter()
            .map(|&(alpha, strategy, line)| {
                let g = &scaled.iter().find(|(a, _)| *a == alpha).expect("α prepared").1;
                run_scenario(&prepared, g, alpha, strategy, line, config)
            })
            .collect()
    };
    let scenarios = match config.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?
            .install(run),
        None => run(),
    };
    let report = SweepReport::build(&grid, partition, config, &scenarios);
    Ok(Sweep {
        nominal,
        scenarios,
        report,
    })
}

fn run_scenario(
    p: &Prepared<'_>,
    scaled: &GridCase,
    alpha: f64,
    strategy: Strategy,
    line: LineId,
    config: &SweepConfig,
) -> ScenarioResult {
    let l = &p.grid.lines[line.0];
    let base = ScenarioResult {
        line,
        from_bus: p.grid.buses[l.from].id,
        to_bus: p.grid.buses[l.to].id,
        strategy,
        alpha,
        status: ScenarioStatus::Ok,
        llr: 0.0,
        agr: 0.0,
        stages: 0,
        level: None,
        severe: false,
        terminated: false,
        nonlocal_adjustments: 0,
        ace_lifted: false,
        error: None,
    };
    let topology = match strategy.structure {
        Structure::Mesh => scaled.topology(),
        Structure::Tree => Topology::new(
            scaled,
            scaled
                .topology()
                .ids()
                .iter()
                .copied()
                .filter(|id| !p.partition.switched_off.contains(id)),
        ),
    };
    let start = OperatingPoint {
        generation: p.nominal.generation.clone(),
        demand: scaled.buses.iter().map(|b| b.demand).collect(),
    };
    let uc = UcRule::default();
    let agc = AgcRule::default();
    let rule: &dyn BalancingRule = match strategy.controller {
        Controller::Uc => &uc,
        Controller::Agc => &agc,
    };
    let opts = CascadeOptions {
        max_stages: config.max_stages,
        ..CascadeOptions::default()
    };
    let trace = match run_cascade_from(scaled, &topology, start, &[line], rule, &opts) {
        Ok(t) => t,
        Err(e) => return ScenarioResult::errored(base, e.to_string()),
    };
    let llr_value = match llr(&trace.initial.demand, &trace.last().demand) {
        Ok(v) => v,
        Err(e) => return ScenarioResult::errored(base, e.to_string()),
    };
    let change = trace.generation_change();
    let gen_change: Vec<f64> = p.generators.iter().map(|&j| change[j]).collect();

    let touched = [p.partition.area_of[l.from], p.partition.area_of[l.to]];
    let nonlocal = (0..p.grid.n_buses())
        .filter(|&j| !touched.contains(&p.partition.area_of[j]))
        .filter(|&j| {
            change[j].abs() > config.agr_tol
                || (trace.initial.demand[j] - trace.last().demand[j]).abs() > config.agr_tol
        })
        .count();
    let first = trace.stages[0].diagnostics.as_ref();
    let after = trace.stages[0].topology(scaled);
    let lifted = (0..p.partition.n_areas()).any(|a| {
        !after
            .ends()
            .iter()
            .any(|&(i, k)| (p.partition.area_of[i] == a) != (p.partition.area_of[k] == a))
    });
    ScenarioResult {
        llr: llr_value,
        agr: agr(&gen_change, config.agr_tol),
        stages: trace.n_stages(),
        level: trace.max_level(),
        severe: first.is_some_and(|d| d.level > RelaxationLevel::L0),
        terminated: trace.status == TerminalStatus::Terminated,
        nonlocal_adjustments: nonlocal,
        ace_lifted: lifted,
        ..base
    }
}
