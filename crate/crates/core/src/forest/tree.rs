//! CART regression trees grown on bootstrap samples.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::base::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(usize),
}

/// Bootstrap population of one tree cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    /// Training rows drawn into this cell, ascending.
    pub members: Vec<usize>,
    /// Bootstrap multiplicity of each member.
    pub counts: Vec<u32>,
    /// Sum of `counts`.
    pub total: u32,
}

impl Leaf {
    pub fn from_members(members: Vec<usize>, counts: Vec<u32>) -> Result<Self> {
        if members.len() != counts.len() {
            return Err(Error::shape("leaf members and counts differ in length"));
        }
        if counts.contains(&0) {
            return Err(Error::domain("leaf member with zero bootstrap count"));
        }
        let total: u32 = counts.iter().sum();
        if total == 0 {
            return Err(Error::domain("empty leaf"));
        }
        Ok(Self { members, counts, total })
    }

    fn from_samples(mut samples: Vec<u32>) -> Self {
        samples.sort_unstable();
        let mut members = Vec::new();
        let mut counts: Vec<u32> = Vec::new();
        for s in samples {
            let s = s as usize;
            if members.last() == Some(&s) {
                *counts.last_mut().expect("paired") += 1;
            } else {
                members.push(s);
                counts.push(1);
            }
        }
        let total = counts.iter().sum();
        Self { members, counts, total }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
    leaves: Vec<Leaf>,
    /// Leaf reached by each training row, including out-of-bag rows.
    #[serde(default)]
    row_leaf: Vec<usize>,
}

impl Tree {
    /// Assembles a tree from explicit nodes and leaves; node 0 is the root.
    pub fn from_parts(nodes: Vec<Node>, leaves: Vec<Leaf>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::domain("tree without nodes"));
        }
        let mut seen = vec![false; leaves.len()];
        for node in &nodes {
            match *node {
                Node::Split { left, right, threshold, .. } => {
                    if left >= nodes.len() || right >= nodes.len() || threshold.is_nan() {
                        return Err(Error::domain("split node points outside the tree"));
                    }
                }
                Node::Leaf(l) => {
                    if l >= leaves.len() || std::mem::replace(&mut seen[l], true) {
                        return Err(Error::domain("leaf index missing or reused"));
                    }
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::domain("unreachable leaf"));
        }
        Ok(Self { nodes, leaves, row_leaf: Vec::new() })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn leaves(&self) -> &[Leaf] {
        &self.leaves
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Leaf of training row `i`.
    pub fn row_leaf(&self, i: usize) -> usize {
        self.row_leaf[i]
    }

    pub fn leaf_of(&self, x: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Split { feature, threshold, left, right } => {
                    at = if x[feature] <= threshold { left } else { right };
                }
                Node::Leaf(l) => return l,
            }
        }
    }

    pub(crate) fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf(_) => None,
            })
            .max()
    }

    pub(crate) fn route_rows(&mut self, data: &Dataset) {
        self.row_leaf = data.rows().map(|x| self.leaf_of(x)).collect();
    }

    pub(crate) fn has_routing(&self, n: usize) -> bool {
        self.row_leaf.len() == n
    }
}

pub(crate) struct Grower<'a> {
    pub data: &'a Dataset,
    pub min_leaf: usize,
    pub mtry: usize,
    pub max_leaves: usize,
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Grower<'_> {
    /// Grows one tree breadth-first on `samples` (row indices with repetition).
    pub fn grow<R: Rng>(&self, samples: Vec<u32>, rng: &mut R) -> Tree {
        let mut nodes = vec![Node::Leaf(usize::MAX)];
        let mut leaves = Vec::new();
        let mut n_leaves = 1usize;
        let mut queue = VecDeque::from([(0usize, samples)]);

        while let Some((id, samples)) = queue.pop_front() {
            let split = if n_leaves < self.max_leaves && samples.len() >= 2 * self.min_leaf {
                self.best_split(&samples, rng)
            } else {
                None
            };
            match split {
                Some(s) => {
                    let (left, right): (Vec<u32>, Vec<u32>) =
                        samples.iter().partition(|&&r| self.data.feature(r as usize, s.feature) <= s.threshold);
                    let l = nodes.len();
                    nodes.push(Node::Leaf(usize::MAX));
                    nodes.push(Node::Leaf(usize::MAX));
                    nodes[id] = Node::Split { feature: s.feature, threshold: s.threshold, left: l, right: l + 1 };
                    n_leaves += 1;
                    queue.push_back((l, left));
                    queue.push_back((l + 1, right));
                }
                None => {
                    nodes[id] = Node::Leaf(leaves.len());
                    leaves.push(Leaf::from_samples(samples));
                }
            }
        }
        Tree { nodes, leaves, row_leaf: Vec::new() }
    }

    fn best_split<R: Rng>(&self, samples: &[u32], rng: &mut R) -> Option<Split> {
        let y = self.data.targets();
        let n = samples.len() as f64;
        let mean = samples.iter().map(|&r| y[r as usize]).sum::<f64>() / n;
        let pure = samples.iter().all(|&r| y[r as usize] == y[samples[0] as usize]);
        if pure {
            return None;
        }

        let d = self.data.n_features();
        let mut features = rand::seq::index::sample(rng, d, self.mtry).into_vec();
        features.sort_unstable();

        let mut best: Option<Split> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(samples.len());
        for &f in &features {
            pairs.clear();
            pairs.extend(samples.iter().map(|&r| (self.data.feature(r as usize, f), y[r as usize] - mean)));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            if pairs[0].0 == pairs[pairs.len() - 1].0 {
                continue;
            }
            let total: f64 = pairs.iter().map(|p| p.1).sum();
            let base = total * total / n;
            let mut left = 0.0;
            for p in 0..pairs.len() - 1 {
                left += pairs[p].1;
                let n_left = p + 1;
                let n_right = pairs.len() - n_left;
                if n_left < self.min_leaf {
                    continue;
                }
                if n_right < self.min_leaf {
                    break;
                }
                let (lo, hi) = (pairs[p].0, pairs[p + 1].0);
                if lo == hi {
                    continue;
                }
                let right = total - left;
                let gain = left * left / n_left as f64 + right * right / n_right as f64 - base;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = 0.5 * (lo + hi);
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(Split { feature: f, threshold, gain });
                }
            }
        }
        best.filter(|b| b.gain > 0.0)
    }
}
