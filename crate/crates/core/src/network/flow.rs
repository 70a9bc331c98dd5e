use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{LineId, NetworkError, Topology};

/// Default per-island balance tolerance, pu.
pub const BALANCE_TOL: f64 = 1e-9;

/// Flows (per topology line) and angles (per bus) solving the DC equations.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowState {
    pub flows: Vec<f64>,
    pub angles: Vec<f64>,
}

/// Connected components, each sorted ascending, ordered by smallest bus.
pub fn islands(topology: &Topology) -> Vec<Vec<usize>> {
    let adj = topology.adjacency();
    let n = topology.n_buses();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &(v, _) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    comp.push(v);
                    stack.push(v);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Per-island Cholesky factors of the grounded Laplacian C B Cᵀ.
///
/// The highest-index bus of each island is the grounded reference; its angle
/// is pinned to zero.
#[derive(Debug, Clone)]
pub struct LaplacianFactor {
    islands: Vec<Vec<usize>>,
    island_of: Vec<usize>,
    local: Vec<Option<usize>>,
    factors: Vec<Option<Cholesky<f64, Dyn>>>,
}

impl LaplacianFactor {
    pub fn new(topology: &Topology) -> Self {
        let islands = islands(topology);
        let n = topology.n_buses();
        let mut island_of = vec![0; n];
        let mut local = vec![None; n];
        for (k, isl) in islands.iter().enumerate() {
            for (pos, &bus) in isl.iter().enumerate() {
                island_of[bus] = k;
                if pos + 1 < isl.len() {
                    local[bus] = Some(pos);
                }
            }
        }
        let mut reduced: Vec<DMatrix<f64>> = islands
            .iter()
            .map(|isl| DMatrix::zeros(isl.len() - 1, isl.len() - 1))
            .collect();
        for (&(i, j), &b) in topology.ends().iter().zip(topology.susceptance()) {
            let m = &mut reduced[island_of[i]];
            if let Some(a) = local[i] {
                m[(a, a)] += b;
            }
            if let Some(c) = local[j] {
                m[(c, c)] += b;
            }
            if let (Some(a), Some(c)) = (local[i], local[j]) {
                m[(a, c)] -= b;
                m[(c, a)] -= b;
            }
        }
        let factors = reduced
            .into_iter()
            .map(|m| {
                if m.nrows() == 0 {
                    None
                } else {
                    // A connected island with positive susceptances is SPD once grounded.
                    Some(Cholesky::new(m).expect("grounded Laplacian of a connected island is SPD"))
                }
            })
            .collect();
        Self {
            islands,
            island_of,
            local,
            factors,
        }
    }

    pub fn islands(&self) -> &[Vec<usize>] {
        &self.islands
    }

    pub fn island_of(&self) -> &[usize] {
        &self.island_of
    }

    pub fn is_connected(&self) -> bool {
        self.islands.len() <= 1
    }

    /// Σ rhs over each island.
    pub fn island_sums(&self, rhs: &[f64]) -> Vec<f64> {
        let mut sums = vec![0.0; self.islands.len()];
        for (bus, &v) in rhs.iter().enumerate() {
            sums[self.island_of[bus]] += v;
        }
        sums
    }

    /// Checks |Σ rhs| ≤ `tol` on every island.
    pub fn check_balance(&self, rhs: &[f64], tol: f64) -> Result<(), NetworkError> {
        if rhs.len() != self.island_of.len() {
            return Err(NetworkError::Dimension {
                expected: self.island_of.len(),
                got: rhs.len(),
            });
        }
        for (island, s) in self.island_sums(rhs).into_iter().enumerate() {
            if !(s.abs() <= tol) {
                return Err(NetworkError::UnbalancedIsland {
                    island,
                    imbalance: s,
                });
            }
        }
        Ok(())
    }

    /// Grounded solve without the balance check. Any island imbalance is
    /// absorbed at the reference bus.
    pub fn solve_grounded(&self, rhs: &[f64]) -> Vec<f64> {
        let mut theta = vec![0.0; self.island_of.len()];
        for (isl, fac) in self.islands.iter().zip(&self.factors) {
            let Some(fac) = fac else { continue };
            let b = DVector::from_iterator(isl.len() - 1, isl[..isl.len() - 1].iter().map(|&k| rhs[k]));
            let x = fac.solve(&b);
            for (pos, &bus) in isl[..isl.len() - 1].iter().enumerate() {
                theta[bus] = x[pos];
            }
        }
        theta
    }

    pub fn solve(&self, rhs: &[f64], tol: f64) -> Result<Vec<f64>, NetworkError> {
        self.check_balance(rhs, tol)?;
        Ok(self.solve_grounded(rhs))
    }

    /// Grounded injection-shift factors H (m × n): for injections balanced per
    /// island, flows are `H p`. Reference-bus columns are zero.
    pub fn ptdf(&self, topology: &Topology) -> DMatrix<f64> {
        let n = self.island_of.len();
        // Grounded inverse, one dense block per island.
        let inverses: Vec<Option<DMatrix<f64>>> =
            self.factors.iter().map(|f| f.as_ref().map(|f| f.inverse())).collect();
        let mut h = DMatrix::zeros(topology.n_lines(), n);
        for (e, (&(i, j), &b)) in topology.ends().iter().zip(topology.susceptance()).enumerate() {
            let isl = self.island_of[i];
            let Some(x) = &inverses[isl] else { continue };
            for &k in &self.islands[isl] {
                let Some(c) = self.local[k] else { continue };
                let xi = self.local[i].map_or(0.0, |a| x[(a, c)]);
                let xj = self.local[j].map_or(0.0, |a| x[(a, c)]);
                h[(e, k)] = b * (xi - xj);
            }
        }
        h
    }
}

/// θ with C B Cᵀ θ = rhs, one reference bus per island pinned to zero.
pub fn laplacian_pinv_solve(topology: &Topology, rhs: &[f64]) -> Result<Vec<f64>, NetworkError> {
    LaplacianFactor::new(topology).solve(rhs, BALANCE_TOL)
}

/// Solves p = C f, f = B Cᵀ θ with the default balance tolerance.
pub fn dc_power_flow(topology: &Topology, injections: &[f64]) -> Result<PowerFlowState, NetworkError> {
    dc_power_flow_with(topology, injections, BALANCE_TOL)
}

pub fn dc_power_flow_with(
    topology: &Topology,
    injections: &[f64],
    balance_tol: f64,
) -> Result<PowerFlowState, NetworkError> {
    let angles = LaplacianFactor::new(topology).solve(injections, balance_tol)?;
    let flows = topology.flows_from_angles(&angles);
    Ok(PowerFlowState { flows, angles })
}

/// Lines with |f_e| > π_e (strict).
pub fn check_limits(state: &PowerFlowState, topology: &Topology) -> Vec<LineId> {
    check_limits_tol(state, topology, 0.0)
}

/// Lines with |f_e| > π_e + tol.
pub fn check_limits_tol(state: &PowerFlowState, topology: &Topology, tol: f64) -> Vec<LineId> {
    assert_eq!(state.flows.len(), topology.n_lines(), "state does not match topology");
    state
        .flows
        .iter()
        .zip(topology.limits())
        .zip(topology.ids())
        .filter(|((f, lim), _)| f.abs() > **lim + tol)
        .map(|(_, &id)| id)
        .collect()
}
