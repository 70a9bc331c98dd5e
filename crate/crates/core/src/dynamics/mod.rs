//! Linear swing and line-flow dynamics
//!
//! ```text
//!   M ω̇ = p − d − D ω − C f
//!     ḟ = B Cᵀ ω
//! ```
//!
//! integrated with fixed-step RK4 under a pluggable controller that supplies
//! d(t).

mod controller;
mod export;

pub use controller::{Controller, Detector, DualGains, UcDynamics};
pub use export::write_csv;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::RelaxationLevel;
use crate::network::{dc_power_flow, islands, GridCase, NetworkError, Topology};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("state magnitude {magnitude:.3e} exceeded the bound at t = {t:.3} s")]
    NumericalBlowup { t: f64, magnitude: f64 },
    #[error("island {island} has zero total α + D")]
    DegenerateIsland { island: usize },
    #[error("invalid simulation input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Steady state of droop control on one topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroopEquilibrium {
    /// d* = α ω*.
    pub control: Vec<f64>,
    /// D ω*.
    pub damping_response: Vec<f64>,
    /// Island-wide frequency deviation at each bus.
    pub omega: Vec<f64>,
    pub flows: Vec<f64>,
}

/// Droop equilibrium for the grid's nominal injections.
pub fn droop_equilibrium(grid: &GridCase, topology: &Topology) -> Result<DroopEquilibrium, DynamicsError> {
    droop_equilibrium_at(grid, topology, &grid.injections())
}

/// Each island settles at ω = Σp / Σ(α + D); bus j absorbs α_j ω through
/// its controller and D_j ω through damping.
pub fn droop_equilibrium_at(
    grid: &GridCase,
    topology: &Topology,
    injections: &[f64],
) -> Result<DroopEquilibrium, DynamicsError> {
    let n = grid.n_buses();
    let mut omega = vec![0.0; n];
    for (island, comp) in islands(topology).iter().enumerate() {
        let imbalance: f64 = comp.iter().map(|&j| injections[j]).sum();
        let weight: f64 = comp.iter().map(|&j| grid.buses[j].alpha + grid.buses[j].damping).sum();
        if !(weight > 0.0) {
            return Err(DynamicsError::DegenerateIsland { island });
        }
        for &j in comp {
            omega[j] = imbalance / weight;
        }
    }
    let control: Vec<f64> = (0..n).map(|j| grid.buses[j].alpha * omega[j]).collect();
    let damping_response: Vec<f64> = (0..n).map(|j| grid.buses[j].damping * omega[j]).collect();
    let post: Vec<f64> = (0..n)
        .map(|j| injections[j] - control[j] - damping_response[j])
        .collect();
    let flows = dc_power_flow(topology, &post)?.flows;
    Ok(DroopEquilibrium {
        control,
        damping_response,
        omega,
        flows,
    })
}

/// Disturbance and initial condition for one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// p driving the swing equation.
    pub injections: Vec<f64>,
    /// ω(0).
    pub omega: Vec<f64>,
    /// f(0), per line of the simulated topology.
    pub flows: Vec<f64>,
    /// Angles of the pre-disturbance steady state; seeds the controller's
    /// virtual angles.
    pub angles: Vec<f64>,
}

impl Scenario {
    /// Lines fail from the nominal steady state: f(0) is the pre-failure flow
    /// on each surviving line and ω(0) = 0.
    pub fn line_failure(grid: &GridCase, surviving: &Topology) -> Result<Self, DynamicsError> {
        let full = grid.topology();
        let pre = dc_power_flow(&full, &grid.injections())?;
        let f0 = pre.flows;
        let flows = surviving
            .ids()
            .iter()
            .map(|id| {
                full.position(*id)
                    .map(|k| f0[k])
                    .ok_or_else(|| DynamicsError::InvalidInput(format!("line {id} is not in service")))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            injections: grid.injections(),
            omega: vec![0.0; grid.n_buses()],
            flows,
            angles: pre.angles,
        })
    }

    /// Starts from the DC flow of `injections` on `topology`, then applies
    /// `disturbance` to the injections.
    pub fn step_change(
        topology: &Topology,
        injections: &[f64],
        disturbance: &[f64],
    ) -> Result<Self, DynamicsError> {
        let pre = dc_power_flow(topology, injections)?;
        Ok(Self {
            injections: injections.iter().zip(disturbance).map(|(p, d)| p + d).collect(),
            omega: vec![0.0; topology.n_buses()],
            flows: pre.flows,
            angles: pre.angles,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub horizon: f64,
    pub dt: f64,
    pub output_interval: f64,
    /// Any state entry above this magnitude aborts the run.
    pub blowup_bound: f64,
    /// End the run at the first severe-failure warning.
    pub stop_on_warning: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            horizon: 60.0,
            dt: 1e-3,
            output_interval: 1e-2,
            blowup_bound: 1e6,
            stop_on_warning: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub omega: Vec<f64>,
    pub flows: Vec<f64>,
    pub control: Vec<f64>,
    /// Controller duals, labelled by [`Trajectory::dual_labels`].
    pub duals: Vec<f64>,
    /// ∞-norm of the full state derivative.
    pub derivative_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    /// A monitored dual crossed the threshold.
    SevereWarning { dual: String, value: f64 },
    /// The controller moved up the relaxation ladder.
    Escalated { level: RelaxationLevel },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub bus_ids: Vec<u32>,
    pub line_labels: Vec<String>,
    pub dual_labels: Vec<String>,
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    /// Ladder level in force at the end of the run.
    pub final_level: Option<RelaxationLevel>,
    /// Largest monitored |dual| over the run.
    pub max_dual: f64,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("a trajectory has at least one sample")
    }

    pub fn first_warning(&self) -> Option<f64> {
        self.events
            .iter()
            .find(|e| matches!(e.kind, EventKind::SevereWarning { .. }))
            .map(|e| e.t)
    }
}

/// Integrates the dynamics on `topology` from `scenario`.
pub fn simulate(
    grid: &GridCase,
    topology: &Topology,
    scenario: &Scenario,
    controller: &Controller,
    opts: &SimOptions,
) -> Result<Trajectory, DynamicsError> {
    let n = grid.n_buses();
    let m = topology.n_lines();
    if scenario.injections.len() != n
        || scenario.omega.len() != n
        || scenario.angles.len() != n
        || scenario.flows.len() != m
    {
        return Err(DynamicsError::InvalidInput("scenario dimensions do not match the topology".into()));
    }
    if !(opts.dt > 0.0) || !(opts.horizon >= opts.dt) || !(opts.output_interval >= opts.dt) {
        return Err(DynamicsError::InvalidInput("need dt > 0 and horizon, output interval ≥ dt".into()));
    }
    if grid.buses.iter().any(|b| !(b.inertia > 0.0)) {
        return Err(DynamicsError::InvalidInput("every inertia must be positive".into()));
    }
    let mut sys = controller::System::new(grid, topology, scenario, controller)?;
    let mut x = sys.initial_state(scenario);
    let steps = (opts.horizon / opts.dt).round() as usize;
    let every = ((opts.output_interval / opts.dt).round() as usize).max(1);

    let mut traj = Trajectory {
        bus_ids: grid.buses.iter().map(|b| b.id).collect(),
        line_labels: topology.ids().iter().map(|id| grid.line_label(*id)).collect(),
        dual_labels: sys.dual_labels(grid),
        samples: Vec::new(),
        events: Vec::new(),
        final_level: sys.level(),
        max_dual: 0.0,
    };
    traj.samples.push(sys.sample(0.0, &x));
    let mut k1 = vec![0.0; x.len()];
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut tmp = k1.clone();
    let h = opts.dt;
    for step in 1..=steps {
        sys.rhs(&x, &mut k1);
        for i in 0..x.len() {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        sys.rhs(&tmp, &mut k2);
        for i in 0..x.len() {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        sys.rhs(&tmp, &mut k3);
        for i in 0..x.len() {
            tmp[i] = x[i] + h * k3[i];
        }
        sys.rhs(&tmp, &mut k4);
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        sys.project(&mut x);
        let t = step as f64 * h;

        let magnitude = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !(magnitude <= opts.blowup_bound) {
            return Err(DynamicsError::NumericalBlowup { t, magnitude });
        }
        let (peak, events) = sys.monitor(t, &mut x, grid);
        traj.max_dual = traj.max_dual.max(peak);
        let warned = events.iter().any(|e| matches!(e.kind, EventKind::SevereWarning { .. }));
        traj.events.extend(events);
        if step % every == 0 || step == steps || (warned && opts.stop_on_warning) {
            traj.samples.push(sys.sample(t, &x));
        }
        if warned && opts.stop_on_warning {
            break;
        }
    }
    traj.final_level = sys.level();
    Ok(traj)
}

/// Outcome of a dual-divergence check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub severe: bool,
    pub warning_time: Option<f64>,
    pub max_dual_seen: f64,
}

/// Runs the unified controller without escalation and reports whether any
/// monitored dual reaches `threshold` by `t_max`.
pub fn detect_severe(
    grid: &GridCase,
    topology: &Topology,
    scenario: &Scenario,
    config: &UcDynamics,
    threshold: f64,
    t_max: f64,
) -> Result<Detection, DynamicsError> {
    if !(threshold > 0.0 && t_max > 0.0) {
        return Err(DynamicsError::InvalidInput("threshold and t_max must be positive".into()));
    }
    let mut config = config.clone();
    let line_duals = config.detector.map_or(true, |d| d.line_duals);
    config.detector = Some(Detector {
        threshold,
        escalate: false,
        rearm_delay: f64::INFINITY,
        line_duals,
    });
    let opts = SimOptions {
        horizon: t_max,
        stop_on_warning: true,
        output_interval: t_max,
        ..SimOptions::default()
    };
    let traj = simulate(grid, topology, scenario, &Controller::Unified(config), &opts)?;
    let warning_time = traj.first_warning();
    Ok(Detection {
        severe: warning_time.is_some(),
        warning_time,
        max_dual_seen: traj.max_dual,
    })
}
