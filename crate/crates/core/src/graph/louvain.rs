//! Louvain modularity maximization: greedy local moves, then aggregation of
//! communities into nodes, repeated until no move improves modularity.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed;

use super::{ClusterAssignment, ClusterKind, WeightedGraph};

/// Gains below this are treated as zero, so float noise cannot cycle moves.
const GAIN_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct LouvainResult {
    pub assignment: ClusterAssignment,
    pub modularity: f64,
    /// Modularity of the partition after each pass, starting from
    /// singletons.
    pub history: Vec<f64>,
}

/// Weighted modularity with resolution `gamma`.
///
/// `Q = sum_c [ in_c / 2m - gamma (tot_c / 2m)^2 ]`, where `in_c` counts each
/// internal edge twice and `tot_c` is the summed degree. Zero for edgeless
/// graphs.
pub fn modularity(g: &WeightedGraph, labels: &[usize], gamma: f64) -> f64 {
    let m2 = 2.0 * g.total_weight();
    if m2 == 0.0 {
        return 0.0;
    }
    let groups = labels.iter().max().map_or(0, |l| l + 1);
    let mut inside = vec![0.0; groups];
    let mut tot = vec![0.0; groups];
    for &(i, j, w) in g.edges() {
        tot[labels[i]] += w;
        tot[labels[j]] += w;
        if labels[i] == labels[j] {
            inside[labels[i]] += 2.0 * w;
        }
    }
    inside.iter().zip(&tot).map(|(a, t)| a / m2 - gamma * (t / m2).powi(2)).sum()
}

/// Aggregated graph: adjacency lists plus self-loop weight per node.
struct Level {
    adj: Vec<Vec<(usize, f64)>>,
    /// `A_ii`, counting each internal edge twice.
    self_loop: Vec<f64>,
    degree: Vec<f64>,
}

impl Level {
    fn from_graph(g: &WeightedGraph) -> Self {
        let mut adj = vec![Vec::new(); g.n_nodes()];
        for &(i, j, w) in g.edges() {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        Self::with_loops(adj, vec![0.0; g.n_nodes()])
    }

    fn with_loops(adj: Vec<Vec<(usize, f64)>>, self_loop: Vec<f64>) -> Self {
        let degree = adj.iter().zip(&self_loop).map(|(a, s)| s + a.iter().map(|e| e.1).sum::<f64>()).collect();
        Self { adj, self_loop, degree }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    /// Local moves until a sweep changes nothing. Returns the community of
    /// each node and whether anything moved.
    fn local_moves(&self, gamma: f64, m2: f64, rng: &mut impl rand::Rng) -> (Vec<usize>, bool) {
        let n = self.len();
        let mut comm: Vec<usize> = (0..n).collect();
        let mut tot = self.degree.clone();
        let mut link = vec![0.0; n];
        let mut seen: Vec<usize> = Vec::new();
        let mut order: Vec<usize> = (0..n).collect();
        let mut moved_any = false;
        loop {
            order.shuffle(rng);
            let mut moved = false;
            for &i in &order {
                let own = comm[i];
                let k = self.degree[i];
                for &(j, w) in &self.adj[i] {
                    let c = comm[j];
                    if link[c] == 0.0 {
                        seen.push(c);
                    }
                    link[c] += w;
                }
                tot[own] -= k;
                // Gain of joining c, up to a common factor: link - gamma tot k / 2m.
                let gain = |c: usize, link: &[f64], tot: &[f64]| link[c] - gamma * tot[c] * k / m2;
                let mut best = own;
                let mut best_gain = gain(own, &link, &tot);
                for &c in &seen {
                    let g = gain(c, &link, &tot);
                    if g > best_gain + GAIN_TOL {
                        best = c;
                        best_gain = g;
                    }
                }
                tot[best] += k;
                if best != own {
                    comm[i] = best;
                    moved = true;
                }
                for &c in &seen {
                    link[c] = 0.0;
                }
                seen.clear();
            }
            if !moved {
                break;
            }
            moved_any = true;
        }
        (comm, moved_any)
    }

    fn aggregate(&self, comm: &[usize]) -> (Level, Vec<usize>) {
        let relabel = ClusterAssignment::from_labels(comm, ClusterKind::Communities);
        let groups = relabel.n_groups();
        let labels = relabel.labels().to_vec();
        let mut self_loop = vec![0.0; groups];
        let mut maps: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); groups];
        for i in 0..self.len() {
            let a = labels[i];
            self_loop[a] += self.self_loop[i];
            for &(j, w) in &self.adj[i] {
                let b = labels[j];
                if a == b {
                    self_loop[a] += w;
                } else {
                    *maps[a].entry(b).or_insert(0.0) += w;
                }
            }
        }
        let adj = maps.into_iter().map(|m| m.into_iter().collect()).collect();
        (Level::with_loops(adj, self_loop), labels)
    }
}

/// Louvain communities. The visit order of each sweep is shuffled with a
/// stream derived from `seed`.
pub fn louvain(g: &WeightedGraph, resolution: f64, seed: u64) -> Result<LouvainResult> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::domain(format!("resolution must be positive, got {resolution}")));
    }
    let n = g.n_nodes();
    let m2 = 2.0 * g.total_weight();
    let mut labels: Vec<usize> = (0..n).collect();
    let mut history = vec![modularity(g, &labels, resolution)];
    if m2 > 0.0 {
        let mut rng = seed::rng(seed);
        let mut level = Level::from_graph(g);
        loop {
            let (comm, moved) = level.local_moves(resolution, m2, &mut rng);
            if !moved {
                break;
            }
            let (next, map) = level.aggregate(&comm);
            for l in labels.iter_mut() {
                *l = map[*l];
            }
            let q = modularity(g, &labels, resolution);
            debug_assert!(q >= history.last().copied().unwrap_or(f64::MIN) - 1e-9);
            history.push(q);
            if next.len() == level.len() {
                break;
            }
            level = next;
        }
    }
    let assignment = ClusterAssignment::from_labels(&labels, ClusterKind::Communities);
    let modularity = modularity(g, assignment.labels(), resolution);
    Ok(LouvainResult { assignment, modularity, history })
}
