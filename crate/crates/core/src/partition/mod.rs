//! Control areas, tie lines and tie-line switching.
//!
//! Areas are built by modularity bisection. Switching removes tie
//! lines until the reduced graph (one node per area, one edge per remaining
//! tie line) is a spanning tree, picking the set that minimizes the
//! congestion level γ(T) = max |f_e| / π_e of the switched network.

mod modularity;

pub use modularity::{modularity, modularity_bisect, modularity_bisect_with, Method, ModularityOptions, Weighting};

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{dc_power_flow, GridCase, LineId, NetworkError, Topology};

/// Spanning-tree count above which switching falls back to the greedy tree.
pub const ENUMERATION_LIMIT: f64 = 1e5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("the network is disconnected")]
    Disconnected,
    #[error("invalid partition: {0}")]
    Invalid(String),
    #[error("switching disconnects area {area} internally")]
    PartitionBroken { area: usize },
    #[error("the reduced graph of areas is disconnected")]
    NoSpanningTree,
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Assignment of buses to areas plus the tie lines switched off.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    /// Area index of each bus, by bus position.
    pub area_of: Vec<usize>,
    pub switched_off: Vec<LineId>,
}

impl Partition {
    pub fn new(area_of: Vec<usize>) -> Self {
        Self {
            area_of,
            switched_off: Vec::new(),
        }
    }

    /// The areas stored on the buses of `grid`.
    pub fn from_grid(grid: &GridCase) -> Self {
        Self::new(grid.area_of())
    }

    pub fn n_areas(&self) -> usize {
        self.area_of.iter().map(|a| a + 1).max().unwrap_or(0)
    }

    /// Bus positions of each area.
    pub fn areas(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_areas()];
        for (j, &a) in self.area_of.iter().enumerate() {
            out[a].push(j);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.areas().iter().map(Vec::len).collect()
    }

    pub fn with_switched_off(mut self, lines: Vec<LineId>) -> Self {
        self.switched_off = lines;
        self.switched_off.sort_unstable();
        self
    }

    /// Checks that areas cover the topology's buses, are numbered without
    /// gaps and each induce a connected subgraph.
    pub fn validate(&self, topology: &Topology) -> Result<(), PartitionError> {
        if self.area_of.len() != topology.n_buses() {
            return Err(PartitionError::Invalid(format!(
                "{} buses assigned, topology has {}",
                self.area_of.len(),
                topology.n_buses()
            )));
        }
        for (a, members) in self.areas().iter().enumerate() {
            if members.is_empty() {
                return Err(PartitionError::Invalid(format!("area {a} is empty")));
            }
            if !induces_connected(topology, &self.area_of, a) {
                return Err(PartitionError::PartitionBroken { area: a });
            }
        }
        Ok(())
    }

    /// Copy of `grid` with these areas written to the buses and the switched
    /// tie lines taken out of service.
    pub fn apply(&self, grid: &GridCase) -> GridCase {
        let mut out = grid.with_lines_out(&self.switched_off);
        for (bus, &a) in out.buses.iter_mut().zip(&self.area_of) {
            bus.area = a;
        }
        out
    }

    /// Serializable form keyed by external bus ids.
    pub fn to_file(&self, grid: &GridCase) -> PartitionFile {
        PartitionFile {
            area_of: grid.buses.iter().zip(&self.area_of).map(|(b, &a)| (b.id, a)).collect(),
            switched_off: self
                .switched_off
                .iter()
                .map(|id| {
                    let l = &grid.lines[id.0];
                    (grid.buses[l.from].id, grid.buses[l.to].id)
                })
                .collect(),
        }
    }
}

/// JSON layout of a partition: `area_of` maps bus ids to areas and
/// `switched_off` lists lines by their endpoint ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionFile {
    pub area_of: BTreeMap<u32, usize>,
    #[serde(default)]
    pub switched_off: Vec<(u32, u32)>,
}

impl PartitionFile {
    pub fn resolve(&self, grid: &GridCase) -> Result<Partition, PartitionError> {
        let mut area_of = Vec::with_capacity(grid.n_buses());
        for bus in &grid.buses {
            match self.area_of.get(&bus.id) {
                Some(&a) => area_of.push(a),
                None => return Err(PartitionError::Invalid(format!("bus {} has no area", bus.id))),
            }
        }
        if self.area_of.len() != grid.n_buses() {
            return Err(PartitionError::Invalid("area map names unknown buses".into()));
        }
        let mut switched = Vec::new();
        for &(a, b) in &self.switched_off {
            match grid.find_line(a, b) {
                Some(id) => switched.push(id),
                None => return Err(PartitionError::Invalid(format!("no line ({a},{b})"))),
            }
        }
        Ok(Partition::new(area_of).with_switched_off(switched))
    }
}

fn induces_connected(topology: &Topology, area_of: &[usize], area: usize) -> bool {
    let members: Vec<usize> = (0..area_of.len()).filter(|&j| area_of[j] == area).collect();
    let Some(&start) = members.first() else { return true };
    let adj = topology.adjacency();
    let mut seen = vec![false; area_of.len()];
    seen[start] = true;
    let mut stack = vec![start];
    let mut count = 1;
    while let Some(u) = stack.pop() {
        for &(v, _) in &adj[u] {
            if !seen[v] && area_of[v] == area {
                seen[v] = true;
                count += 1;
                stack.push(v);
            }
        }
    }
    count == members.len()
}

/// Lines of `topology` whose endpoints lie in different areas.
pub fn tie_lines(topology: &Topology, partition: &Partition) -> Vec<LineId> {
    topology
        .ids()
        .iter()
        .zip(topology.ends())
        .filter(|(_, &(i, j))| partition.area_of[i] != partition.area_of[j])
        .map(|(id, _)| *id)
        .collect()
}

/// Tie lines as edges between areas: (line, area of from, area of to).
pub fn reduced_graph(topology: &Topology, partition: &Partition) -> Vec<(LineId, usize, usize)> {
    topology
        .ids()
        .iter()
        .zip(topology.ends())
        .filter(|(_, &(i, j))| partition.area_of[i] != partition.area_of[j])
        .map(|(id, &(i, j))| (*id, partition.area_of[i], partition.area_of[j]))
        .collect()
}

/// Whether the given area-level edges form a spanning tree on `n_areas`.
pub fn is_spanning_tree(n_areas: usize, edges: &[(usize, usize)]) -> bool {
    if edges.len() + 1 != n_areas {
        return false;
    }
    let mut uf = UnionFind::new(n_areas);
    edges.iter().all(|&(a, b)| uf.union(a, b))
}

/// γ(T): the largest loading ratio after switching off `switched_off`.
pub fn congestion_level(
    topology: &Topology,
    injections: &[f64],
    partition: &Partition,
    switched_off: &[LineId],
) -> Result<f64, PartitionError> {
    let ties = tie_lines(topology, partition);
    if let Some(id) = switched_off.iter().find(|id| !ties.contains(id)) {
        return Err(PartitionError::Invalid(format!("line {id} is not a tie line")));
    }
    let after = topology.without(switched_off);
    for a in 0..partition.n_areas() {
        if !induces_connected(&after, &partition.area_of, a) {
            return Err(PartitionError::PartitionBroken { area: a });
        }
    }
    let state = dc_power_flow(&after, injections)?;
    Ok(max_loading(&after, &state.flows))
}

fn max_loading(topology: &Topology, flows: &[f64]) -> f64 {
    flows
        .iter()
        .zip(topology.limits())
        .fold(0.0, |m, (f, l)| m.max(f.abs() / l))
}

/// Outcome of a switching search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Switching {
    pub switched_off: Vec<LineId>,
    pub gamma: f64,
    /// Candidate trees evaluated.
    pub candidates: usize,
    /// False when the greedy tree was used instead of enumeration.
    pub exhaustive: bool,
}

/// Number of spanning trees of the reduced multigraph (matrix-tree theorem).
pub fn spanning_tree_count(n_areas: usize, edges: &[(usize, usize)]) -> f64 {
    if n_areas <= 1 {
        return 1.0;
    }
    let mut l = DMatrix::<f64>::zeros(n_areas, n_areas);
    for &(a, b) in edges {
        l[(a, a)] += 1.0;
        l[(b, b)] += 1.0;
        l[(a, b)] -= 1.0;
        l[(b, a)] -= 1.0;
    }
    let minor = l.view((1, 1), (n_areas - 1, n_areas - 1)).into_owned();
    minor.determinant().round().max(0.0)
}

/// Solves min γ(T) over tie-line sets T whose removal leaves the reduced
/// graph a spanning tree. Ties go to the kept set with the largest total
/// pre-switching |flow|, then to the lexicographically smallest T.
pub fn optimal_switching(
    topology: &Topology,
    injections: &[f64],
    partition: &Partition,
) -> Result<Switching, PartitionError> {
    partition.validate(topology)?;
    let ties = reduced_graph(topology, partition);
    let l = partition.n_areas();
    let edges: Vec<(usize, usize)> = ties.iter().map(|&(_, a, b)| (a, b)).collect();
    let mut uf = UnionFind::new(l);
    for &(a, b) in &edges {
        uf.union(a, b);
    }
    if (0..l).any(|a| uf.find(a) != uf.find(0)) {
        return Err(PartitionError::NoSpanningTree);
    }
    let base = dc_power_flow(topology, injections)?;
    let tie_flow: Vec<f64> = ties
        .iter()
        .map(|(id, ..)| base.flows[topology.position(*id).expect("tie line in topology")].abs())
        .collect();

    if spanning_tree_count(l, &edges) > ENUMERATION_LIMIT {
        let kept = greedy_tree(l, &edges, &tie_flow);
        let off = complement(&ties, &kept);
        let gamma = congestion_level(topology, injections, partition, &off)?;
        return Ok(Switching {
            switched_off: off,
            gamma,
            candidates: 1,
            exhaustive: false,
        });
    }

    let trees = enumerate_trees(l, &edges);
    let scored: Vec<Result<(f64, f64, Vec<LineId>), PartitionError>> = trees
        .par_iter()
        .map(|kept| {
            let off = complement(&ties, kept);
            let gamma = congestion_level(topology, injections, partition, &off)?;
            let kept_flow: f64 = kept.iter().map(|&k| tie_flow[k]).sum();
            Ok((gamma, kept_flow, off))
        })
        .collect();
    let mut best: Option<(f64, f64, Vec<LineId>)> = None;
    for s in scored {
        let s = s?;
        let better = match &best {
            None => true,
            Some(b) => {
                s.0 < b.0 || (s.0 == b.0 && (s.1 > b.1 || (s.1 == b.1 && s.2 < b.2)))
            }
        };
        if better {
            best = Some(s);
        }
    }
    let (gamma, _, off) = best.expect("a connected reduced graph has a spanning tree");
    Ok(Switching {
        switched_off: off,
        gamma,
        candidates: trees.len(),
        exhaustive: true,
    })
}

/// Keeps the spanning tree of largest pre-switching |flow|, built greedily
/// (for two areas: the single tie line of largest |flow|, lowest index on
/// ties) and switches off every other tie line.
pub fn keep_largest_flow(
    topology: &Topology,
    injections: &[f64],
    partition: &Partition,
) -> Result<Vec<LineId>, PartitionError> {
    let ties = reduced_graph(topology, partition);
    let edges: Vec<(usize, usize)> = ties.iter().map(|&(_, a, b)| (a, b)).collect();
    let base = dc_power_flow(topology, injections)?;
    let flow: Vec<f64> = ties
        .iter()
        .map(|(id, ..)| base.flows[topology.position(*id).expect("tie line in topology")].abs())
        .collect();
    let kept = greedy_tree(partition.n_areas(), &edges, &flow);
    if kept.len() + 1 != partition.n_areas() {
        return Err(PartitionError::NoSpanningTree);
    }
    Ok(complement(&ties, &kept))
}

/// Areas touched by at least one endpoint of a failed line.
pub fn associated_areas(grid: &GridCase, failures: &[LineId], partition: &Partition) -> BTreeSet<usize> {
    failures
        .iter()
        .flat_map(|id| {
            let l = &grid.lines[id.0];
            [partition.area_of[l.from], partition.area_of[l.to]]
        })
        .collect()
}

fn complement(ties: &[(LineId, usize, usize)], kept: &[usize]) -> Vec<LineId> {
    let mut off: Vec<LineId> = (0..ties.len())
        .filter(|k| !kept.contains(k))
        .map(|k| ties[k].0)
        .collect();
    off.sort_unstable();
    off
}

/// Kruskal on descending weight; equal weights keep the lower index.
fn greedy_tree(n: usize, edges: &[(usize, usize)], weight: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.sort_by(|&a, &b| weight[b].total_cmp(&weight[a]).then(a.cmp(&b)));
    let mut uf = UnionFind::new(n);
    let mut kept: Vec<usize> = order.into_iter().filter(|&k| uf.union(edges[k].0, edges[k].1)).collect();
    kept.sort_unstable();
    kept
}

/// All edge-index sets forming a spanning tree, each sorted ascending.
fn enumerate_trees(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    fn go(
        k: usize,
        need: usize,
        edges: &[(usize, usize)],
        uf: &UnionFind,
        chosen: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if need == 0 {
            out.push(chosen.clone());
            return;
        }
        if edges.len() - k < need {
            return;
        }
        let (a, b) = edges[k];
        let mut with = uf.clone();
        if with.union(a, b) {
            chosen.push(k);
            go(k + 1, need - 1, edges, &with, chosen, out);
            chosen.pop();
        }
        go(k + 1, need, edges, uf, chosen, out);
    }
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    go(0, n - 1, edges, &UnionFind::new(n), &mut Vec::new(), &mut out);
    out
}

#[derive(Debug, Clone)]
struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Joins the sets of `a` and `b`; false if already joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_counts() {
        // Three parallel ties between two areas.
        assert_eq!(spanning_tree_count(2, &[(0, 1), (0, 1), (1, 0)]), 3.0);
        // Triangle of areas.
        assert_eq!(spanning_tree_count(3, &[(0, 1), (1, 2), (0, 2)]), 3.0);
        assert_eq!(enumerate_trees(3, &[(0, 1), (1, 2), (0, 2)]).len(), 3);
        assert_eq!(enumerate_trees(2, &[(0, 1), (0, 1), (1, 0)]).len(), 3);
        // K4 has 16 spanning trees.
        let k4 = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        assert_eq!(spanning_tree_count(4, &k4), 16.0);
        assert_eq!(enumerate_trees(4, &k4).len(), 16);
    }

    #[test]
    fn greedy_prefers_heavy_edges() {
        let kept = greedy_tree(2, &[(0, 1), (0, 1), (0, 1)], &[0.1, 0.9, 0.3]);
        assert_eq!(kept, vec![1]);
        let kept = greedy_tree(2, &[(0, 1), (0, 1)], &[0.5, 0.5]);
        assert_eq!(kept, vec![0]);
    }
}
