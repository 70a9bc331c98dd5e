//! Grid data model and the DC power-flow solver.
//!
//! A [`GridCase`] holds buses and directed lines in per-unit. A [`Topology`]
//! is an ordered subset of in-service lines over the same bus set; every flow
//! vector in the crate is indexed by topology position, not by [`LineId`].

mod flow;
mod topology;

pub use flow::{
    check_limits, check_limits_tol, dc_power_flow, dc_power_flow_with, islands,
    laplacian_pinv_solve, LaplacianFactor, PowerFlowState, BALANCE_TOL,
};
pub use topology::Topology;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a line in [`GridCase::lines`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LineId(pub usize);

impl std::fmt::Display for LineId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("island {island} is unbalanced by {imbalance:.3e} pu")]
    UnbalancedIsland { island: usize, imbalance: f64 },
    #[error("line {line}: {reason}")]
    InvalidLine { line: usize, reason: String },
    #[error("bus {bus}: {reason}")]
    InvalidBus { bus: u32, reason: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("line {0} is not part of the topology")]
    UnknownLine(LineId),
}

/// One bus. Power quantities are per-unit on the case base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// External bus number.
    pub id: u32,
    /// Nominal demand, nonnegative.
    pub demand: f64,
    /// Nominal generator dispatch.
    pub generation: f64,
    pub gen_min: f64,
    pub gen_max: f64,
    /// Damping / frequency-sensitive load coefficient D_j.
    pub damping: f64,
    /// Inertia M_j.
    pub inertia: f64,
    /// Droop gain and generation-adjustment cost gain α_j.
    pub alpha: f64,
    /// Cost gain for shedding load at this bus.
    pub alpha_load: f64,
    /// Quadratic dispatch cost coefficient used by DC OPF.
    pub cost: f64,
    /// Control area index.
    pub area: usize,
}

/// Defaults for parameters that case data usually omits.
pub const DEFAULT_INERTIA: f64 = 0.1;
pub const DEFAULT_DAMPING: f64 = 0.05;
pub const DEFAULT_ALPHA: f64 = 1.0;
/// Shedding gain as a fraction of the generation gain.
pub const DEFAULT_LOAD_GAIN_RATIO: f64 = 1e-2;

impl Bus {
    /// Empty bus in area 0 with default dynamics and gains.
    pub fn new(id: u32) -> Self {
        Self {
            id,
            demand: 0.0,
            generation: 0.0,
            gen_min: 0.0,
            gen_max: 0.0,
            damping: DEFAULT_DAMPING,
            inertia: DEFAULT_INERTIA,
            alpha: DEFAULT_ALPHA,
            alpha_load: DEFAULT_ALPHA * DEFAULT_LOAD_GAIN_RATIO,
            cost: 1.0,
            area: 0,
        }
    }

    pub fn with_demand(mut self, demand: f64) -> Self {
        self.demand = demand;
        self
    }

    /// Sets dispatch and capacity; the lower capacity bound stays at zero.
    pub fn with_generation(mut self, generation: f64, gen_max: f64) -> Self {
        self.generation = generation;
        self.gen_max = gen_max;
        self
    }

    pub fn with_area(mut self, area: usize) -> Self {
        self.area = area;
        self
    }

    pub fn with_gains(mut self, alpha: f64, alpha_load: f64) -> Self {
        self.alpha = alpha;
        self.alpha_load = alpha_load;
        self
    }

    pub fn with_dynamics(mut self, inertia: f64, damping: f64) -> Self {
        self.inertia = inertia;
        self.damping = damping;
        self
    }

    pub fn injection(&self) -> f64 {
        self.generation - self.demand
    }

    pub fn is_generator(&self) -> bool {
        self.gen_max > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    /// Bus index (position in [`GridCase::buses`]) of the tail.
    pub from: usize,
    /// Bus index of the head.
    pub to: usize,
    pub susceptance: f64,
    /// Flow limit π_e.
    pub limit: f64,
    pub in_service: bool,
}

impl Line {
    pub fn new(from: usize, to: usize, susceptance: f64, limit: f64) -> Self {
        Self {
            from,
            to,
            susceptance,
            limit,
            in_service: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
}

impl GridCase {
    /// Builds a case and checks the structural invariants.
    pub fn new(
        name: impl Into<String>,
        base_mva: f64,
        buses: Vec<Bus>,
        lines: Vec<Line>,
    ) -> Result<Self, NetworkError> {
        let case = Self {
            name: name.into(),
            base_mva,
            buses,
            lines,
        };
        case.validate()?;
        Ok(case)
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let n = self.buses.len();
        for (k, bus) in self.buses.iter().enumerate() {
            let bad = |reason: &str| NetworkError::InvalidBus {
                bus: bus.id,
                reason: reason.to_string(),
            };
            if self.buses[..k].iter().any(|b| b.id == bus.id) {
                return Err(bad("duplicate bus id"));
            }
            if !(bus.demand >= 0.0) {
                return Err(bad("demand must be nonnegative"));
            }
            if !(bus.gen_min >= 0.0 && bus.gen_min <= bus.gen_max) {
                return Err(bad("generation bounds must satisfy 0 <= min <= max"));
            }
            if !(bus.damping >= 0.0) {
                return Err(bad("damping must be nonnegative"));
            }
            if !(bus.inertia > 0.0) {
                return Err(bad("inertia must be positive"));
            }
            if !(bus.alpha > 0.0 && bus.alpha_load > 0.0) {
                return Err(bad("control gains must be positive"));
            }
            if !(bus.cost > 0.0) {
                return Err(bad("dispatch cost must be positive"));
            }
            if !bus.generation.is_finite() {
                return Err(bad("generation must be finite"));
            }
        }
        for (k, line) in self.lines.iter().enumerate() {
            let bad = |reason: &str| NetworkError::InvalidLine {
                line: k,
                reason: reason.to_string(),
            };
            if line.from >= n || line.to >= n {
                return Err(bad("endpoint references a missing bus"));
            }
            if line.from == line.to {
                return Err(bad("self loop"));
            }
            if !(line.susceptance > 0.0 && line.susceptance.is_finite()) {
                return Err(bad("susceptance must be positive"));
            }
            if !(line.limit > 0.0) {
                return Err(bad("flow limit must be positive"));
            }
        }
        Ok(())
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_areas(&self) -> usize {
        self.buses.iter().map(|b| b.area + 1).max().unwrap_or(0)
    }

    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Finds the first line joining two external bus ids, in either orientation.
    pub fn find_line(&self, a: u32, b: u32) -> Option<LineId> {
        let (ia, ib) = (self.bus_index(a)?, self.bus_index(b)?);
        self.lines
            .iter()
            .position(|l| (l.from == ia && l.to == ib) || (l.from == ib && l.to == ia))
            .map(LineId)
    }

    /// Human-readable `(from,to)` label using external ids.
    pub fn line_label(&self, id: LineId) -> String {
        let l = &self.lines[id.0];
        format!("({},{})", self.buses[l.from].id, self.buses[l.to].id)
    }

    pub fn injections(&self) -> Vec<f64> {
        self.buses.iter().map(Bus::injection).collect()
    }

    pub fn area_of(&self) -> Vec<usize> {
        self.buses.iter().map(|b| b.area).collect()
    }

    /// Topology of all in-service lines.
    pub fn topology(&self) -> Topology {
        Topology::new(
            self,
            self.lines
                .iter()
                .enumerate()
                .filter(|(_, l)| l.in_service)
                .map(|(k, _)| LineId(k)),
        )
    }

    pub fn total_demand(&self) -> f64 {
        self.buses.iter().map(|b| b.demand).sum()
    }

    /// Copy with the given lines taken out of service.
    pub fn with_lines_out(&self, out: &[LineId]) -> Self {
        let mut case = self.clone();
        for id in out {
            case.lines[id.0].in_service = false;
        }
        case
    }
}


#[cfg(test)]
mod tests {
    use super::test_util::*;
    use super::*;

    #[test]
    fn rejects_nonpositive_susceptance() {
        let err = GridCase::new(
            "x",
            100.0,
            vec![bus(1, 1.0, 0.0), bus(2, 0.0, 1.0)],
            vec![line(0, 1, -1.0, 1.0)],
        )
        .unwrap_err();
        assert!(matches!(err, NetworkError::InvalidLine { line: 0, .. }));
    }

    #[test]
    fn rejects_dangling_endpoint() {
        let err = GridCase::new(
            "x",
            100.0,
            vec![bus(1, 1.0, 0.0)],
            vec![line(0, 3, 1.0, 1.0)],
        )
        .unwrap_err();
        assert!(matches!(err, NetworkError::InvalidLine { .. }));
    }

    #[test]
    fn finds_lines_in_either_orientation() {
        let c = case(
            vec![bus(10, 1.0, 0.0), bus(20, 0.0, 1.0)],
            vec![line(0, 1, 1.0, 1.0)],
        );
        assert_eq!(c.find_line(20, 10), Some(LineId(0)));
        assert_eq!(c.line_label(LineId(0)), "(10,20)");
    }
}
