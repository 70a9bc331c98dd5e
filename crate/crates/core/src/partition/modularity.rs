use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{Partition, PartitionError};
use crate::network::{islands, Topology};

/// Edge weights entering the modularity matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Each line counts once; parallel lines add up.
    #[default]
    Unweighted,
    /// Lines weighted by susceptance.
    Susceptance,
}

/// How the initial two-way split is found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Clauset-Newman-Moore agglomeration, stopped at two communities.
    #[default]
    Greedy,
    /// Sign of the leading eigenvector of the modularity matrix.
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModularityOptions {
    pub method: Method,
    pub weighting: Weighting,
    /// Greedy single-bus moves after the split.
    pub refine: bool,
}

impl Default for ModularityOptions {
    fn default() -> Self {
        Self {
            method: Method::Greedy,
            weighting: Weighting::Unweighted,
            refine: true,
        }
    }
}

fn weights(topology: &Topology, weighting: Weighting) -> DMatrix<f64> {
    let n = topology.n_buses();
    let mut w = DMatrix::zeros(n, n);
    for (&(i, j), &b) in topology.ends().iter().zip(topology.susceptance()) {
        let x = match weighting {
            Weighting::Unweighted => 1.0,
            Weighting::Susceptance => b,
        };
        w[(i, j)] += x;
        w[(j, i)] += x;
    }
    w
}

fn modularity_matrix(w: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let n = w.nrows();
    let k: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    let two_m: f64 = k.iter().sum();
    let b = DMatrix::from_fn(n, n, |i, j| w[(i, j)] - k[i] * k[j] / two_m);
    (b, two_m)
}

/// Newman modularity of a partition under the given weighting.
pub fn modularity(topology: &Topology, area_of: &[usize], weighting: Weighting) -> f64 {
    let w = weights(topology, weighting);
    let (b, two_m) = modularity_matrix(&w);
    let n = topology.n_buses();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if area_of[i] == area_of[j] {
                q += b[(i, j)];
            }
        }
    }
    q / two_m
}

/// Two-area split with the default options.
pub fn modularity_bisect(topology: &Topology) -> Result<Partition, PartitionError> {
    modularity_bisect_with(topology, &ModularityOptions::default())
}

/// Splits the network in two, repairs connectivity, then optionally climbs
/// modularity with single-bus moves that keep both areas connected. Bus 0
/// always lands in area 0.
pub fn modularity_bisect_with(topology: &Topology, opts: &ModularityOptions) -> Result<Partition, PartitionError> {
    let n = topology.n_buses();
    if n < 2 {
        return Err(PartitionError::Invalid("need at least two buses".into()));
    }
    if islands(topology).len() != 1 {
        return Err(PartitionError::Disconnected);
    }
    let w = weights(topology, opts.weighting);
    let (b, two_m) = modularity_matrix(&w);
    let mut side = match opts.method {
        Method::Greedy => agglomerate(&w, two_m),
        Method::Spectral => spectral_split(&w, &b),
    };

    let adj = topology.adjacency();
    repair(&adj, &mut side);
    if opts.refine {
        refine(&adj, &b, &mut side);
    }
    let flip = side[0];
    Ok(Partition::new(side.iter().map(|&s| usize::from(s != flip)).collect()))
}

/// Merges the pair of adjacent communities with the largest modularity gain
/// until two are left. Ties go to the pair with the smallest labels.
fn agglomerate(w: &DMatrix<f64>, two_m: f64) -> Vec<bool> {
    let n = w.nrows();
    let mut label: Vec<usize> = (0..n).collect();
    let mut a: Vec<f64> = (0..n).map(|i| w.row(i).sum() / two_m).collect();
    let mut e: Vec<BTreeMap<usize, f64>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i && w[(i, j)] != 0.0)
                .map(|j| (j, w[(i, j)] / two_m))
                .collect()
        })
        .collect();
    let mut alive = n;
    while alive > 2 {
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, row) in e.iter().enumerate() {
            for (&j, &eij) in row.range(i + 1..) {
                let dq = 2.0 * (eij - a[i] * a[j]);
                if best.map_or(true, |(bq, _, _)| dq > bq) {
                    best = Some((dq, i, j));
                }
            }
        }
        // A disconnected graph is rejected earlier, so a pair always exists.
        let Some((_, i, j)) = best else { break };
        let row_j = std::mem::take(&mut e[j]);
        for (k, ejk) in row_j {
            e[k].remove(&j);
            if k != i {
                *e[i].entry(k).or_insert(0.0) += ejk;
                *e[k].entry(i).or_insert(0.0) += ejk;
            }
        }
        a[i] += a[j];
        a[j] = 0.0;
        for l in label.iter_mut() {
            if *l == j {
                *l = i;
            }
        }
        alive -= 1;
    }
    let first = label[0];
    label.iter().map(|&l| l != first).collect()
}

fn spectral_split(w: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<bool> {
    let n = w.nrows();
    let eig = SymmetricEigen::new(b.clone());
    let lead = (0..n)
        .max_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]).then(y.cmp(&x)))
        .expect("n >= 2");
    let v = eig.eigenvectors.column(lead);
    let mut side = split_by_sign(&v.iter().copied().collect::<Vec<_>>());
    if side.iter().all(|&s| s == side[0]) {
        // No modular structure: fall back to the Fiedler vector.
        side = split_by_sign(&fiedler(w));
    }
    if side.iter().all(|&s| s == side[0]) {
        side[n - 1] = !side[0];
    }
    side
}

/// true for strictly positive entries, after orienting so entry 0 is ≥ 0.
fn split_by_sign(v: &[f64]) -> Vec<bool> {
    let scale = if v[0] < 0.0 { -1.0 } else { 1.0 };
    let tol = 1e-12 * v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    v.iter().map(|x| scale * x > tol).collect()
}

fn fiedler(w: &DMatrix<f64>) -> Vec<f64> {
    let n = w.nrows();
    let l = DMatrix::from_fn(n, n, |i, j| if i == j { w.row(i).sum() - w[(i, i)] } else { -w[(i, j)] });
    let eig = SymmetricEigen::new(l);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    eig.eigenvectors.column(order[1]).iter().copied().collect()
}

/// Components of the buses on one side.
fn components(adj: &[Vec<(usize, usize)>], side: &[bool], which: bool) -> Vec<Vec<usize>> {
    let n = side.len();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if side[s] != which || seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![s];
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &(v, _) in &adj[u] {
                if side[v] == which && !seen[v] {
                    seen[v] = true;
                    comp.push(v);
                    stack.push(v);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Moves every component but the largest on each side across, until both
/// sides are connected.
fn repair(adj: &[Vec<(usize, usize)>], side: &mut [bool]) {
    loop {
        let mut changed = false;
        for which in [false, true] {
            let mut comps = components(adj, side, which);
            if comps.len() <= 1 {
                continue;
            }
            // Largest first; equal sizes keep the one with the lowest bus.
            comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
            for comp in &comps[1..] {
                for &j in comp {
                    side[j] = !which;
                }
            }
            changed = true;
        }
        if !changed {
            return;
        }
    }
}

fn side_connected_without(adj: &[Vec<(usize, usize)>], side: &[bool], skip: usize) -> bool {
    let which = side[skip];
    let Some(start) = (0..side.len()).find(|&j| j != skip && side[j] == which) else { return false };
    let mut seen = vec![false; side.len()];
    seen[start] = true;
    seen[skip] = true;
    let mut stack = vec![start];
    while let Some(u) = stack.pop() {
        for &(v, _) in &adj[u] {
            if side[v] == which && !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    (0..side.len()).all(|j| side[j] != which || seen[j])
}

fn refine(adj: &[Vec<(usize, usize)>], b: &DMatrix<f64>, side: &mut [bool]) {
    let n = side.len();
    let s = |x: bool| if x { 1.0 } else { -1.0 };
    let mut g: Vec<f64> = (0..n).map(|i| (0..n).map(|j| b[(i, j)] * s(side[j])).sum()).collect();
    loop {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..n {
            let si = s(side[i]);
            let gain = -4.0 * si * (g[i] - b[(i, i)] * si);
            if gain <= 1e-12 || best.is_some_and(|(bg, _)| gain <= bg) {
                continue;
            }
            let touches_other = adj[i].iter().any(|&(v, _)| side[v] != side[i]);
            if touches_other && side_connected_without(adj, side, i) {
                best = Some((gain, i));
            }
        }
        let Some((_, i)) = best else { return };
        let old = s(side[i]);
        side[i] = !side[i];
        for k in 0..n {
            g[k] -= 2.0 * old * b[(k, i)];
        }
    }
}
