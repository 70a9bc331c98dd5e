use super::{DynamicsError, Event, EventKind, Sample, Scenario};
use crate::control::{ControlProblem, RelaxationLevel};
use crate::network::{GridCase, Topology};

/// Supplies d(t).
#[derive(Debug, Clone, PartialEq)]
pub enum Controller {
    /// d ≡ 0.
    None,
    /// d_j = α_j ω_j.
    Droop,
    Unified(UcDynamics),
}

/// Step gains of the dual and virtual-angle updates, 1/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualGains {
    pub zeta: f64,
    pub chi: f64,
}

impl Default for DualGains {
    fn default() -> Self {
        Self { zeta: 1.0, chi: 1.0 }
    }
}

/// Dual-divergence monitor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detector {
    pub threshold: f64,
    /// Move up the relaxation ladder on each warning.
    pub escalate: bool,
    /// After a warning the monitor re-arms once every dual is back under the
    /// threshold and at least this many seconds have passed.
    pub rearm_delay: f64,
    /// Watch the line-limit duals as well as the balance and ACE duals.
    pub line_duals: bool,
}

impl Default for Detector {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            escalate: true,
            rearm_delay: 10.0,
            line_duals: true,
        }
    }
}

/// Primal-dual realization of the unified controller for one control
/// problem. With u = ω + λ:
///
/// ```text
///   dg = clip(αG u),  ds = clip(−αL u),  d = dg − ds
///   λ̇  = ζ (p − d − L φ)
///   φ̇  = χ (L λ − L Eᵀ π − C B (ρ⁺ − ρ⁻))
///   π̇  = ζ (E L φ − s)              (0 on lifted rows)
///   ρ̇⁺ = ζ [B Cᵀ φ − f̄]⁺,  ρ̇⁻ = ζ [f̲ − B Cᵀ φ]⁺
/// ```
///
/// where φ are virtual angles and L = C B Cᵀ.
#[derive(Debug, Clone, PartialEq)]
pub struct UcDynamics {
    pub problem: ControlProblem,
    pub gains: DualGains,
    pub detector: Option<Detector>,
}

impl UcDynamics {
    pub fn new(problem: ControlProblem) -> Self {
        Self {
            problem,
            gains: DualGains::default(),
            detector: Some(Detector::default()),
        }
    }
}

struct UcState {
    problem: ControlProblem,
    gains: DualGains,
    detector: Option<Detector>,
    armed: bool,
    warned_at: f64,
}

enum Mode {
    Open,
    Droop(Vec<f64>),
    Unified(Box<UcState>),
}

/// State layout: ω (n), f (m), then for the unified controller
/// λ (n), φ (n), π (areas), ρ⁺ (m), ρ⁻ (m).
pub(super) struct System<'a> {
    n: usize,
    m: usize,
    topology: &'a Topology,
    p: Vec<f64>,
    inertia: Vec<f64>,
    damping: Vec<f64>,
    mode: Mode,
}

impl<'a> System<'a> {
    pub(super) fn new(
        grid: &GridCase,
        topology: &'a Topology,
        scenario: &Scenario,
        controller: &Controller,
    ) -> Result<Self, DynamicsError> {
        let mode = match controller {
            Controller::None => Mode::Open,
            Controller::Droop => Mode::Droop(grid.buses.iter().map(|b| b.alpha).collect()),
            Controller::Unified(uc) => {
                if uc.problem.topology != *topology {
                    return Err(DynamicsError::InvalidInput(
                        "control problem is posed on a different topology".into(),
                    ));
                }
                Mode::Unified(Box::new(UcState {
                    problem: uc.problem.clone(),
                    gains: uc.gains,
                    detector: uc.detector,
                    armed: true,
                    warned_at: 0.0,
                }))
            }
        };
        Ok(Self {
            n: grid.n_buses(),
            m: topology.n_lines(),
            topology,
            p: scenario.injections.clone(),
            inertia: grid.buses.iter().map(|b| b.inertia).collect(),
            damping: grid.buses.iter().map(|b| b.damping).collect(),
            mode,
        })
    }

    fn n_areas(&self) -> usize {
        match &self.mode {
            Mode::Unified(uc) => uc.problem.n_areas(),
            _ => 0,
        }
    }

    fn len(&self) -> usize {
        match self.mode {
            Mode::Unified(_) => 3 * self.n + 3 * self.m + self.n_areas(),
            _ => self.n + self.m,
        }
    }

    // Offsets of λ, φ, π, ρ⁺, ρ⁻.
    fn offsets(&self) -> (usize, usize, usize, usize, usize) {
        let lam = self.n + self.m;
        let phi = lam + self.n;
        let pi = phi + self.n;
        let up = pi + self.n_areas();
        (lam, phi, pi, up, up + self.m)
    }

    pub(super) fn initial_state(&self, scenario: &Scenario) -> Vec<f64> {
        let mut x = vec![0.0; self.len()];
        x[..self.n].copy_from_slice(&scenario.omega);
        x[self.n..self.n + self.m].copy_from_slice(&scenario.flows);
        if let Mode::Unified(_) = self.mode {
            let (_, phi, ..) = self.offsets();
            x[phi..phi + self.n].copy_from_slice(&scenario.angles);
        }
        x
    }

    pub(super) fn level(&self) -> Option<RelaxationLevel> {
        match &self.mode {
            Mode::Unified(uc) => Some(uc.problem.level),
            _ => None,
        }
    }

    pub(super) fn dual_labels(&self, grid: &GridCase) -> Vec<String> {
        let Mode::Unified(uc) = &self.mode else { return Vec::new() };
        let mut out: Vec<String> = grid.buses.iter().map(|b| format!("lambda_{}", b.id)).collect();
        out.extend((0..uc.problem.n_areas()).map(|a| format!("pi_{a}")));
        for id in self.topology.ids() {
            out.push(format!("rho_up_{}", grid.line_label(*id)));
        }
        for id in self.topology.ids() {
            out.push(format!("rho_dn_{}", grid.line_label(*id)));
        }
        out
    }

    fn laplacian(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (&(i, k), &b) in self.topology.ends().iter().zip(self.topology.susceptance()) {
            let flow = b * (v[i] - v[k]);
            out[i] += flow;
            out[k] -= flow;
        }
    }

    fn control(&self, x: &[f64], d: &mut [f64]) {
        match &self.mode {
            Mode::Open => d.iter_mut().for_each(|v| *v = 0.0),
            Mode::Droop(alpha) => {
                for j in 0..self.n {
                    d[j] = alpha[j] * x[j];
                }
            }
            Mode::Unified(uc) => {
                let (lam, ..) = self.offsets();
                let pr = &uc.problem;
                for j in 0..self.n {
                    let u = x[j] + x[lam + j];
                    let (lo, hi) = pr.gen_bounds[j];
                    let dg = (pr.alpha_gen[j] * u).clamp(lo, hi);
                    let ds = (-pr.alpha_load[j] * u).clamp(0.0, pr.shed_cap(j));
                    d[j] = dg - ds;
                }
            }
        }
    }

    pub(super) fn rhs(&self, x: &[f64], dx: &mut [f64]) {
        let (n, m) = (self.n, self.m);
        let mut d = vec![0.0; n];
        self.control(x, &mut d);
        let flows = &x[n..n + m];
        let outflow = self.topology.net_outflow(flows);
        for j in 0..n {
            dx[j] = (self.p[j] - d[j] - self.damping[j] * x[j] - outflow[j]) / self.inertia[j];
        }
        let df = self.topology.flows_from_angles(&x[..n]);
        dx[n..n + m].copy_from_slice(&df);

        let Mode::Unified(uc) = &self.mode else { return };
        let pr = &uc.problem;
        let DualGains { zeta, chi } = uc.gains;
        let (lam, phi, pi, up, dn) = self.offsets();
        let n_areas = pr.n_areas();

        let mut l_phi = vec![0.0; n];
        self.laplacian(&x[phi..phi + n], &mut l_phi);
        for j in 0..n {
            dx[lam + j] = zeta * (self.p[j] - d[j] - l_phi[j]);
        }

        // Virtual angle descent direction before the Laplacian.
        let mut shifted = vec![0.0; n];
        for j in 0..n {
            shifted[j] = x[lam + j] - x[pi + pr.area_of[j]];
        }
        let mut dphi = vec![0.0; n];
        self.laplacian(&shifted, &mut dphi);
        let virt = self.topology.flows_from_angles(&x[phi..phi + n]);
        if pr.enforce_line_limits {
            for (e, (&(i, k), &b)) in self.topology.ends().iter().zip(self.topology.susceptance()).enumerate() {
                let r = b * (x[up + e] - x[dn + e]);
                dphi[i] -= r;
                dphi[k] += r;
            }
        }
        for j in 0..n {
            dx[phi + j] = chi * dphi[j];
        }

        let mut export = vec![0.0; n_areas];
        for j in 0..n {
            export[pr.area_of[j]] += l_phi[j];
        }
        for a in 0..n_areas {
            dx[pi + a] = if pr.lifted[a] {
                0.0
            } else {
                zeta * (export[a] - pr.scheduled_export[a])
            };
        }

        let limits = self.topology.limits();
        for e in 0..m {
            if pr.enforce_line_limits {
                let g_up = zeta * (virt[e] - limits[e]);
                let g_dn = zeta * (-limits[e] - virt[e]);
                dx[up + e] = if x[up + e] > 0.0 { g_up } else { g_up.max(0.0) };
                dx[dn + e] = if x[dn + e] > 0.0 { g_dn } else { g_dn.max(0.0) };
            } else {
                dx[up + e] = 0.0;
                dx[dn + e] = 0.0;
            }
        }
    }

    /// Clamps inequality duals at zero and pins lifted ACE duals.
    pub(super) fn project(&self, x: &mut [f64]) {
        let Mode::Unified(uc) = &self.mode else { return };
        let (_, _, pi, up, _) = self.offsets();
        for a in 0..uc.problem.n_areas() {
            if uc.problem.lifted[a] {
                x[pi + a] = 0.0;
            }
        }
        for v in &mut x[up..] {
            *v = v.max(0.0);
        }
    }

    pub(super) fn sample(&self, t: f64, x: &[f64]) -> Sample {
        let (n, m) = (self.n, self.m);
        let mut d = vec![0.0; n];
        self.control(x, &mut d);
        let mut dx = vec![0.0; x.len()];
        self.rhs(x, &mut dx);
        let duals = match self.mode {
            Mode::Unified(_) => {
                let (lam, phi, pi, ..) = self.offsets();
                x[lam..phi].iter().chain(&x[pi..]).copied().collect()
            }
            _ => Vec::new(),
        };
        Sample {
            t,
            omega: x[..n].to_vec(),
            flows: x[n..n + m].to_vec(),
            control: d,
            duals,
            derivative_norm: dx.iter().fold(0.0, |a: f64, v| a.max(v.abs())),
        }
    }

    /// Checks the dual threshold after a step and escalates if configured.
    /// Returns the largest monitored |dual| and any events raised.
    pub(super) fn monitor(&mut self, t: f64, x: &mut [f64], grid: &GridCase) -> (f64, Vec<Event>) {
        let (lam, phi, pi, up, _) = self.offsets();
        let n = self.n;
        let Mode::Unified(uc) = &mut self.mode else { return (0.0, Vec::new()) };
        let end = match uc.detector {
            Some(d) if !d.line_duals => up,
            _ => x.len(),
        };
        let (peak, arg) = x[lam..phi]
            .iter()
            .enumerate()
            .map(|(k, v)| (v.abs(), k))
            .chain(x[pi..end].iter().enumerate().map(|(k, v)| (v.abs(), n + k)))
            .fold((0.0, 0), |a, b| if b.0 > a.0 { b } else { a });
        let Some(det) = uc.detector else { return (peak, Vec::new()) };
        let mut events = Vec::new();
        if uc.armed && peak > det.threshold {
            let labels = dual_label(grid, self.topology, uc.problem.n_areas(), arg);
            events.push(Event {
                t,
                kind: EventKind::SevereWarning {
                    dual: labels,
                    value: peak,
                },
            });
            uc.armed = false;
            uc.warned_at = t;
            if det.escalate {
                if let Some(level) = uc.problem.level.next() {
                    uc.problem = uc.problem.clone().at_level(level);
                    for a in 0..uc.problem.n_areas() {
                        if uc.problem.lifted[a] {
                            x[pi + a] = 0.0;
                        }
                    }
                    events.push(Event {
                        t,
                        kind: EventKind::Escalated { level },
                    });
                }
            }
        } else if !uc.armed && det.escalate && peak < det.threshold && t - uc.warned_at >= det.rearm_delay {
            uc.armed = true;
        }
        (peak, events)
    }
}

/// Name of monitored dual `k` in λ, π, ρ⁺, ρ⁻ order.
fn dual_label(grid: &GridCase, topology: &Topology, n_areas: usize, k: usize) -> String {
    let n = grid.n_buses();
    let m = topology.n_lines();
    if k < n {
        format!("lambda_{}", grid.buses[k].id)
    } else if k < n + n_areas {
        format!("pi_{}", k - n)
    } else if k < n + n_areas + m {
        format!("rho_up_{}", grid.line_label(topology.ids()[k - n - n_areas]))
    } else {
        format!("rho_dn_{}", grid.line_label(topology.ids()[k - n - n_areas - m]))
    }
}
