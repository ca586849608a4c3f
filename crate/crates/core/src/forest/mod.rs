//! Random forests: bagged CART trees, mean and quantile prediction, and the
//! leaf co-occurrence weights used as a localizer.
//!
//! For a query `x`, tree `l` contributes to calibration row `j` the bootstrap
//! count of `j` in the leaf containing `x`, divided by `k` times the leaf's
//! bootstrap population. Summed over trees this gives the forest weights
//! `w(x, X_j)`, which are the quantile-regression-forest weights.

mod tree;
mod weights;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base::{weighted_quantile, Dataset, StepCdf};
use crate::error::{Error, Result};
use crate::seed;

pub use tree::{Leaf, Node, Tree};
pub use weights::{conditional_cdf, cross_weight_matrix, localizer_row, Anchor, WeightVector};

/// Hyperparameters of a forest. `None` fields take data-dependent defaults
/// when the forest is fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Leaf budget per tree; unbounded when `None`.
    pub max_leaves: Option<usize>,
    /// Defaults to `max(5, ceil(sqrt(n) / 2))`.
    pub min_leaf_size: Option<usize>,
    /// Candidate features per node; defaults to `ceil(d / 3)`.
    pub mtry: Option<usize>,
    /// When false every row enters every tree exactly once.
    pub bootstrap: bool,
    /// Draws per bootstrap sample; defaults to `n`.
    pub bootstrap_size: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_leaves: None,
            min_leaf_size: None,
            mtry: None,
            bootstrap: true,
            bootstrap_size: None,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Fills defaults for a table with `n` rows and `d` features and checks
    /// the result.
    pub fn resolve(&self, n: usize, d: usize) -> Result<ForestParams> {
        let min_leaf = self.min_leaf_size.unwrap_or_else(|| 5.max(((n as f64).sqrt() / 2.0).ceil() as usize));
        let mtry = self.mtry.unwrap_or_else(|| d.div_ceil(3).max(1));
        let resolved = ForestParams {
            n_trees: self.n_trees,
            max_leaves: self.max_leaves,
            min_leaf_size: Some(min_leaf),
            mtry: Some(mtry),
            bootstrap: self.bootstrap,
            bootstrap_size: Some(self.bootstrap_size.unwrap_or(n)),
            seed: self.seed,
        };
        resolved.check(d)?;
        Ok(resolved)
    }

    fn check(&self, d: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::domain("forest needs at least one tree"));
        }
        if self.min_leaf_size == Some(0) {
            return Err(Error::domain("min_leaf_size must be at least 1"));
        }
        if let Some(m) = self.mtry {
            if m == 0 || m > d {
                return Err(Error::domain(format!("mtry {m} outside 1..={d}")));
            }
        }
        if self.bootstrap_size == Some(0) {
            return Err(Error::domain("bootstrap_size must be at least 1"));
        }
        if self.max_leaves == Some(0) {
            return Err(Error::domain("max_leaves must be at least 1"));
        }
        Ok(())
    }
}

/// Fitted ensemble. Keeps the training targets so it can predict, and the
/// leaf of every training row in every tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    params: ForestParams,
    n_features: usize,
    targets: Vec<f64>,
    trees: Vec<Tree>,
}

impl Forest {
    /// Grows `params.n_trees` trees on independent bootstrap samples.
    ///
    /// Tree `t` uses its own RNG stream derived from `(seed, t)`, so the
    /// result does not depend on the number of worker threads.
    pub fn fit(data: &Dataset, params: &ForestParams) -> Result<Self> {
        let n = data.n_rows();
        let d = data.n_features();
        let params = params.resolve(n, d)?;
        let min_leaf = params.min_leaf_size.expect("resolved");
        if n < min_leaf {
            return Err(Error::Fit(format!("{n} rows is fewer than min_leaf_size {min_leaf}")));
        }
        let grower = tree::Grower {
            data,
            min_leaf,
            mtry: params.mtry.expect("resolved"),
            max_leaves: params.max_leaves.unwrap_or(usize::MAX),
        };
        let draws = params.bootstrap_size.expect("resolved");
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = seed::rng(seed::child(params.seed, t as u64));
                let samples: Vec<u32> = if params.bootstrap {
                    (0..draws).map(|_| rng.random_range(0..n) as u32).collect()
                } else {
                    (0..n as u32).collect()
                };
                let mut tree = grower.grow(samples, &mut rng);
                tree.route_rows(data);
                tree
            })
            .collect();
        Ok(Self { params, n_features: d, targets: data.targets().to_vec(), trees })
    }

    /// Assembles a forest from hand-built trees over `data`.
    pub fn from_trees(trees: Vec<Tree>, data: &Dataset) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::domain("forest needs at least one tree"));
        }
        let n = data.n_rows();
        let d = data.n_features();
        let mut routed = Vec::with_capacity(trees.len());
        for mut tree in trees {
            if tree.max_feature().is_some_and(|f| f >= d) {
                return Err(Error::shape("split on a feature the data does not have"));
            }
            if tree.leaves().iter().flat_map(|l| &l.members).any(|&m| m >= n) {
                return Err(Error::shape("leaf member outside the training rows"));
            }
            tree.route_rows(data);
            routed.push(tree);
        }
        let params = ForestParams {
            n_trees: routed.len(),
            min_leaf_size: Some(1),
            mtry: Some(d),
            bootstrap: false,
            ..ForestParams::default()
        };
        Ok(Self { params, n_features: d, targets: data.targets().to_vec(), trees: routed })
    }

    /// Checks the internal consistency of a deserialized forest.
    pub fn validate(&self) -> Result<()> {
        let n = self.targets.len();
        if self.trees.is_empty() || self.trees.len() != self.params.n_trees {
            return Err(Error::Format("tree count does not match parameters".into()));
        }
        for tree in &self.trees {
            if !tree.has_routing(n)
                || tree.max_feature().is_some_and(|f| f >= self.n_features)
                || (0..n).any(|i| tree.row_leaf(i) >= tree.n_leaves())
            {
                return Err(Error::Format("tree structure inconsistent with its data".into()));
            }
            for leaf in tree.leaves() {
                let total: u32 = leaf.counts.iter().sum();
                if leaf.members.len() != leaf.counts.len()
                    || total != leaf.total
                    || total == 0
                    || leaf.members.iter().any(|&m| m >= n)
                {
                    return Err(Error::Format("leaf counts inconsistent".into()));
                }
            }
        }
        Ok(())
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Number of training rows.
    pub fn n_train(&self) -> usize {
        self.targets.len()
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub(crate) fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::shape(format!("query has {} features, forest expects {}", x.len(), self.n_features)));
        }
        Ok(())
    }

    /// Leaf of `x` in each tree.
    pub fn leaves_of(&self, x: &[f64]) -> Result<Vec<usize>> {
        self.check_dim(x)?;
        Ok(self.trees.iter().map(|t| t.leaf_of(x)).collect())
    }

    /// Forest weights `w(x, X_j)` over the training rows, without a test slot.
    pub fn leaf_weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let k = self.trees.len() as f64;
        let mut w = vec![0.0; self.n_train()];
        for tree in &self.trees {
            let leaf = &tree.leaves()[tree.leaf_of(x)];
            let denom = k * leaf.total as f64;
            for (&j, &c) in leaf.members.iter().zip(&leaf.counts) {
                w[j] += c as f64 / denom;
            }
        }
        Ok(w)
    }

    /// Weighted mean of the training targets.
    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        let w = self.leaf_weights(x)?;
        Ok(w.iter().zip(&self.targets).map(|(w, y)| w * y).sum())
    }

    /// `beta`-quantile of the weighted training targets.
    pub fn predict_quantile(&self, x: &[f64], beta: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::domain(format!("quantile level {beta} outside [0, 1]")));
        }
        let w = self.leaf_weights(x)?;
        let atoms = w.iter().zip(&self.targets).filter(|(w, _)| **w > 0.0).map(|(&w, &y)| (y, w)).collect();
        weighted_quantile(beta, &StepCdf::from_atoms(atoms)?)
    }
}
