//! Calibration-point graphs from localizer weights, their partitions, and
//! region assignment of test points.

mod groupwise;
mod louvain;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::Forest;

pub use groupwise::{GroupThreshold, GroupwiseModel, SplitGroups};
pub use louvain::{louvain, modularity, LouvainResult};

/// Undirected graph with positive symmetric edge weights and no self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    n: usize,
    /// `(i, j, a_ij)` with `i < j`, sorted.
    edges: Vec<(usize, usize, f64)>,
}

impl WeightedGraph {
    /// Symmetrizes sparse directed weights: `a_ij = (w_ij + w_ji) / 2`.
    /// Diagonal entries are dropped.
    pub fn from_directed(n: usize, rows: &[Vec<(usize, f64)>]) -> Result<Self> {
        if rows.len() != n {
            return Err(Error::shape(format!("{} weight rows for {n} nodes", rows.len())));
        }
        let mut half = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            for &(j, w) in row {
                if j >= n {
                    return Err(Error::shape(format!("edge to node {j} of {n}")));
                }
                if !(w >= 0.0) || !w.is_finite() {
                    return Err(Error::domain(format!("invalid weight {w}")));
                }
                if i != j && w > 0.0 {
                    half.push((i.min(j), i.max(j), w / 2.0));
                }
            }
        }
        half.sort_by_key(|a| (a.0, a.1));
        let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(half.len());
        for (i, j, w) in half {
            match edges.last_mut() {
                Some(e) if e.0 == i && e.1 == j => e.2 += w,
                _ => edges.push((i, j, w)),
            }
        }
        Ok(Self { n, edges })
    }

    /// Dense `n x n` weights with test slots already dropped.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::shape("weight matrix is not square"));
        }
        let sparse: Vec<Vec<(usize, f64)>> =
            rows.iter().map(|r| r.iter().copied().enumerate().filter(|(_, w)| *w != 0.0).collect()).collect();
        Self::from_directed(n, &sparse)
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.2).sum()
    }

    /// Drops edges lighter than `min_weight`. Off by default elsewhere:
    /// pruning can split a component, and groupwise coverage then holds
    /// only for the pruned partition.
    pub fn pruned(&self, min_weight: f64) -> Result<Self> {
        if !(min_weight >= 0.0) || !min_weight.is_finite() {
            return Err(Error::domain(format!("invalid prune threshold {min_weight}")));
        }
        let edges = self.edges.iter().copied().filter(|e| e.2 >= min_weight).collect();
        Ok(Self { n: self.n, edges })
    }
}

/// Forest weights `w(X_i, X_j)` between calibration rows, anchored at each
/// calibration row, without a test slot. Sparse, columns ascending.
pub fn calibration_weights(forest: &Forest) -> Vec<Vec<(usize, f64)>> {
    let n = forest.n_train();
    let k = forest.n_trees() as f64;
    let mut dense = vec![0.0; n];
    let mut touched = Vec::new();
    (0..n)
        .map(|i| {
            for tree in forest.trees() {
                let leaf = &tree.leaves()[tree.row_leaf(i)];
                let denom = k * leaf.total as f64;
                for (&j, &c) in leaf.members.iter().zip(&leaf.counts) {
                    if dense[j] == 0.0 {
                        touched.push(j);
                    }
                    dense[j] += c as f64 / denom;
                }
            }
            touched.sort_unstable();
            let row = touched.iter().map(|&j| (j, std::mem::take(&mut dense[j]))).collect();
            touched.clear();
            row
        })
        .collect()
}

/// Graph over the calibration rows of a fitted localizer.
pub fn build_graph(forest: &Forest) -> WeightedGraph {
    let n = forest.n_train();
    WeightedGraph::from_directed(n, &calibration_weights(forest)).expect("forest weights are valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterKind {
    Components,
    Communities,
}

/// Partition of the calibration points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    n_groups: usize,
    kind: ClusterKind,
}

impl ClusterAssignment {
    /// Relabels so groups are numbered by their smallest node.
    pub fn from_labels(labels: &[usize], kind: ClusterKind) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels: Vec<usize> = labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        Self { labels, n_groups: map.len(), kind }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn kind(&self) -> ClusterKind {
        self.kind
    }

    /// Node indices of each group, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_groups];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// Per-group sums of `weights` over the calibration slots.
    pub fn group_masses(&self, weights: &[f64]) -> Result<Vec<f64>> {
        if weights.len() != self.labels.len() {
            return Err(Error::shape(format!("{} weights for {} clustered points", weights.len(), self.labels.len())));
        }
        let mut m = vec![0.0; self.n_groups];
        for (&l, &w) in self.labels.iter().zip(weights) {
            m[l] += w;
        }
        Ok(m)
    }

    /// Writes `node,label` rows with a header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["node", "label"]).map_err(csv_err)?;
        for (i, l) in self.labels.iter().enumerate() {
            w.write_record([i.to_string(), l.to_string()]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Union-find with path halving and union by size.
struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
    }
}

pub fn connected_components(g: &WeightedGraph) -> ClusterAssignment {
    let mut sets = DisjointSets::new(g.n);
    for &(i, j, _) in &g.edges {
        sets.union(i, j);
    }
    let roots: Vec<usize> = (0..g.n).map(|i| sets.find(i)).collect();
    ClusterAssignment::from_labels(&roots, ClusterKind::Components)
}

/// Region of a test point: the group carrying most of its weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionId {
    Group(usize),
    /// The top two group masses are within the tie tolerance.
    Undecided,
}

impl RegionId {
    pub fn group(self) -> Option<usize> {
        match self {
            RegionId::Group(g) => Some(g),
            RegionId::Undecided => None,
        }
    }
}

impl std::fmt::Display for RegionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RegionId::Group(g) => write!(f, "{g}"),
            RegionId::Undecided => f.write_str("undecided"),
        }
    }
}

pub const DEFAULT_TIE_TOL: f64 = 1e-9;

/// Argmax of the group masses of `weights`; `Undecided` when the runner-up
/// is within `tol` of the winner.
pub fn assign_region(weights: &[f64], clusters: &ClusterAssignment, tol: f64) -> Result<RegionId> {
    let masses = clusters.group_masses(weights)?;
    let mut best = 0;
    for (l, &m) in masses.iter().enumerate() {
        if m > masses[best] {
            best = l;
        }
    }
    let tied = masses.iter().enumerate().any(|(l, &m)| l != best && masses[best] - m <= tol);
    Ok(if tied { RegionId::Undecided } else { RegionId::Group(best) })
}
