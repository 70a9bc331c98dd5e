use nalgebra::DMatrix;

use super::{GridCase, LineId};

/// Ordered set of lines over a fixed bus set.
///
/// Each column of the incidence matrix has +1 at the line's `from` bus and
/// −1 at its `to` bus.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n_buses: usize,
    ids: Vec<LineId>,
    ends: Vec<(usize, usize)>,
    susceptance: Vec<f64>,
    limit: Vec<f64>,
}

impl Topology {
    pub fn new(grid: &GridCase, ids: impl IntoIterator<Item = LineId>) -> Self {
        let ids: Vec<LineId> = ids.into_iter().collect();
        let lines = ids.iter().map(|id| &grid.lines[id.0]);
        Self {
            n_buses: grid.n_buses(),
            ends: lines.clone().map(|l| (l.from, l.to)).collect(),
            susceptance: lines.clone().map(|l| l.susceptance).collect(),
            limit: lines.map(|l| l.limit).collect(),
            ids,
        }
    }

    /// Builds a topology from raw parts; used by tests and synthetic networks.
    pub fn from_parts(
        n_buses: usize,
        ends: Vec<(usize, usize)>,
        susceptance: Vec<f64>,
        limit: Vec<f64>,
    ) -> Self {
        assert_eq!(ends.len(), susceptance.len());
        assert_eq!(ends.len(), limit.len());
        assert!(ends.iter().all(|&(a, b)| a < n_buses && b < n_buses && a != b));
        Self {
            n_buses,
            ids: (0..ends.len()).map(LineId).collect(),
            ends,
            susceptance,
            limit,
        }
    }

    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    pub fn n_lines(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[LineId] {
        &self.ids
    }

    pub fn ends(&self) -> &[(usize, usize)] {
        &self.ends
    }

    pub fn susceptance(&self) -> &[f64] {
        &self.susceptance
    }

    pub fn limits(&self) -> &[f64] {
        &self.limit
    }

    pub fn position(&self, id: LineId) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    pub fn contains(&self, id: LineId) -> bool {
        self.position(id).is_some()
    }

    /// Same topology without the given lines. Ids not present are ignored.
    pub fn without(&self, out: &[LineId]) -> Self {
        let keep: Vec<usize> = (0..self.n_lines())
            .filter(|&k| !out.contains(&self.ids[k]))
            .collect();
        Self {
            n_buses: self.n_buses,
            ids: keep.iter().map(|&k| self.ids[k]).collect(),
            ends: keep.iter().map(|&k| self.ends[k]).collect(),
            susceptance: keep.iter().map(|&k| self.susceptance[k]).collect(),
            limit: keep.iter().map(|&k| self.limit[k]).collect(),
        }
    }

    /// Copy with every limit multiplied by `factor`.
    pub fn scaled_limits(&self, factor: f64) -> Self {
        let mut t = self.clone();
        t.limit.iter_mut().for_each(|l| *l *= factor);
        t
    }

    /// Reverses the stored orientation of the line at `pos`.
    pub fn reversed(&self, pos: usize) -> Self {
        let mut t = self.clone();
        let (a, b) = t.ends[pos];
        t.ends[pos] = (b, a);
        t
    }

    /// Dense node-edge incidence matrix C (n × m).
    pub fn incidence(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.n_buses, self.n_lines());
        for (e, &(i, j)) in self.ends.iter().enumerate() {
            c[(i, e)] = 1.0;
            c[(j, e)] = -1.0;
        }
        c
    }

    /// C f: net flow leaving each bus.
    pub fn net_outflow(&self, flows: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_buses];
        for (&(i, j), &f) in self.ends.iter().zip(flows) {
            out[i] += f;
            out[j] -= f;
        }
        out
    }

    /// B Cᵀ θ: flows induced by bus angles.
    pub fn flows_from_angles(&self, angles: &[f64]) -> Vec<f64> {
        self.ends
            .iter()
            .zip(&self.susceptance)
            .map(|(&(i, j), &b)| b * (angles[i] - angles[j]))
            .collect()
    }

    /// Adjacency lists: for each bus, the (neighbor, line position) pairs.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.n_buses];
        for (e, &(i, j)) in self.ends.iter().enumerate() {
            adj[i].push((j, e));
            adj[j].push((i, e));
        }
        adj
    }
}
