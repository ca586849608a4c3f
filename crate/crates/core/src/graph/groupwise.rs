//! Calibration restricted to the test point's region.

use serde::{Deserialize, Serialize};

use crate::base::MiscoverageLevel;
use crate::calibration::{naive, split_threshold, LcpModel};
use crate::error::{Error, Result};
use crate::forest::{localizer_row, Anchor};

use super::{assign_region, ClusterAssignment, RegionId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupThreshold {
    pub threshold: f64,
    pub region: RegionId,
    /// Adapted level at `v = +inf` over the members used, when localized.
    pub alpha_tilde: Option<f64>,
    /// Whether the whole calibration set was used instead of a region.
    pub pooled: bool,
}

/// LCP-RF with the coverage count restricted to the test point's region.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupwiseModel {
    model: LcpModel,
    clusters: ClusterAssignment,
    tol: f64,
}

impl GroupwiseModel {
    pub fn new(model: LcpModel, clusters: ClusterAssignment, tol: f64) -> Result<Self> {
        if clusters.labels().len() != model.n_calibration() {
            return Err(Error::shape(format!(
                "{} cluster labels for {} calibration points",
                clusters.labels().len(),
                model.n_calibration()
            )));
        }
        if !(tol >= 0.0) {
            return Err(Error::domain("tie tolerance must be nonnegative"));
        }
        Ok(Self { model, clusters, tol })
    }

    pub fn model(&self) -> &LcpModel {
        &self.model
    }

    pub fn clusters(&self) -> &ClusterAssignment {
        &self.clusters
    }

    pub fn region(&self, x: &[f64]) -> Result<RegionId> {
        region_of(&self.model, &self.clusters, self.tol, x)
    }

    /// Members of the region of `x`, or `None` to pool everything.
    fn members(&self, x: &[f64]) -> Result<(RegionId, Option<Vec<usize>>)> {
        let region = self.region(x)?;
        let members = region.group().map(|g| {
            self.clusters.labels().iter().enumerate().filter(|(_, &l)| l == g).map(|(i, _)| i).collect::<Vec<_>>()
        });
        Ok((region, members.filter(|m| !m.is_empty())))
    }

    pub fn threshold(&self, x: &[f64]) -> Result<GroupThreshold> {
        let (region, members) = self.members(x)?;
        Ok(match members {
            Some(m) => GroupThreshold {
                threshold: self.model.threshold_in(x, &m)?,
                region,
                alpha_tilde: Some(self.model.alpha_tilde_in(x, f64::INFINITY, &m)?),
                pooled: false,
            },
            None => GroupThreshold {
                threshold: self.model.threshold(x)?,
                region,
                alpha_tilde: Some(self.model.alpha_tilde(x, f64::INFINITY)?),
                pooled: true,
            },
        })
    }

    /// Brute-force counterpart of [`threshold`](Self::threshold).
    pub fn threshold_naive(&self, x: &[f64]) -> Result<f64> {
        match self.members(x)?.1 {
            Some(m) => naive::threshold_in(&self.model, x, &m),
            None => naive::threshold(&self.model, x),
        }
    }
}

/// Split conformal per region: the region's residuals with an extra `+inf`
/// atom, each of mass `1 / (|region| + 1)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitGroups {
    model: LcpModel,
    clusters: ClusterAssignment,
    tol: f64,
    #[serde(with = "crate::serde_f64::vec")]
    per_group: Vec<f64>,
    #[serde(with = "crate::serde_f64")]
    pooled: f64,
}

impl SplitGroups {
    /// `model` only serves to place test points; its residuals are the
    /// calibration scores.
    pub fn new(model: LcpModel, clusters: ClusterAssignment, tol: f64) -> Result<Self> {
        let alpha: MiscoverageLevel = model.alpha();
        let res = model.residuals();
        if clusters.labels().len() != res.len() {
            return Err(Error::shape("cluster labels do not match the calibration set"));
        }
        let per_group = clusters
            .members()
            .iter()
            .map(|m| split_threshold(&m.iter().map(|&i| res[i]).collect::<Vec<_>>(), alpha))
            .collect::<Result<Vec<_>>>()?;
        let pooled = split_threshold(res, alpha)?;
        Ok(Self { model, clusters, tol, per_group, pooled })
    }

    pub fn model(&self) -> &LcpModel {
        &self.model
    }

    pub fn clusters(&self) -> &ClusterAssignment {
        &self.clusters
    }

    pub fn group_thresholds(&self) -> &[f64] {
        &self.per_group
    }

    pub fn threshold(&self, x: &[f64]) -> Result<GroupThreshold> {
        let region = region_of(&self.model, &self.clusters, self.tol, x)?;
        Ok(match region {
            RegionId::Group(g) => {
                GroupThreshold { threshold: self.per_group[g], region, alpha_tilde: None, pooled: false }
            }
            RegionId::Undecided => GroupThreshold { threshold: self.pooled, region, alpha_tilde: None, pooled: true },
        })
    }
}

fn region_of(model: &LcpModel, clusters: &ClusterAssignment, tol: f64, x: &[f64]) -> Result<RegionId> {
    let row = localizer_row(model.localizer(), Anchor::Test, x)?;
    assign_region(row.calibration(), clusters, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::Dataset;
    use crate::forest::{Forest, ForestParams, Leaf, Node, Tree};
    use crate::graph::{build_graph, connected_components, ClusterKind};

    fn alpha(a: f64) -> MiscoverageLevel {
        MiscoverageLevel::new(a).unwrap()
    }

    /// Block 1 at x < 0.5 with residual `c1`, block 2 with residual `c2`.
    fn blocks(n1: usize, n2: usize, c1: f64, c2: f64, a: f64) -> LcpModel {
        let n = n1 + n2;
        let x: Vec<f64> = (0..n).map(|i| if i < n1 { 0.1 } else { 0.9 }).collect();
        let r: Vec<f64> = (0..n).map(|i| if i < n1 { c1 } else { c2 }).collect();
        let data = Dataset::new(x, 1, r).unwrap();
        let tree = Tree::from_parts(
            vec![Node::Split { feature: 0, threshold: 0.5, left: 1, right: 2 }, Node::Leaf(0), Node::Leaf(1)],
            vec![
                Leaf::from_members((0..n1).collect(), vec![1; n1]).unwrap(),
                Leaf::from_members((n1..n).collect(), vec![1; n2]).unwrap(),
            ],
        )
        .unwrap();
        LcpModel::from_forest(Forest::from_trees(vec![tree], &data).unwrap(), alpha(a)).unwrap()
    }

    #[test]
    fn block_thresholds_see_only_their_block() {
        let m = blocks(20, 20, 1.0, 5.0, 0.1);
        let clusters = connected_components(&build_graph(m.localizer()));
        assert_eq!(clusters.n_groups(), 2);
        let g = GroupwiseModel::new(m.clone(), clusters.clone(), 1e-9).unwrap();
        let t = g.threshold(&[0.2]).unwrap();
        assert_eq!((t.threshold, t.region, t.pooled), (1.0, RegionId::Group(0), false));
        assert_eq!(g.threshold(&[0.8]).unwrap().threshold, 5.0);
        assert_eq!(g.threshold_naive(&[0.2]).unwrap(), 1.0);

        // Four points per block cannot reach 1 - 0.1 without the +inf atom.
        let small = blocks(4, 4, 1.0, 5.0, 0.1);
        let c = connected_components(&build_graph(small.localizer()));
        let g = GroupwiseModel::new(small, c, 1e-9).unwrap();
        assert_eq!(g.threshold(&[0.2]).unwrap().threshold, f64::INFINITY);

        let s = SplitGroups::new(m, clusters, 1e-9).unwrap();
        assert_eq!(s.group_thresholds(), &[1.0, 5.0]);
        assert_eq!(s.threshold(&[0.9]).unwrap().threshold, 5.0);
    }

    #[test]
    fn one_group_equals_global() {
        let n = 25;
        let x: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let r: Vec<f64> = (0..n).map(|i| ((i * 7) % 11) as f64).collect();
        let data = Dataset::new(x, 1, r).unwrap();
        let p = ForestParams { n_trees: 5, min_leaf_size: Some(3), seed: 2, ..Default::default() };
        let m = LcpModel::from_forest(Forest::fit(&data, &p).unwrap(), alpha(0.2)).unwrap();
        let one = ClusterAssignment::from_labels(&vec![0; n], ClusterKind::Components);
        let g = GroupwiseModel::new(m.clone(), one, 1e-9).unwrap();
        for q in [0.05, 0.5, 0.93] {
            assert_eq!(g.threshold(&[q]).unwrap().threshold, m.threshold(&[q]).unwrap());
        }
    }

    #[test]
    fn mismatched_clusters_are_rejected() {
        let m = blocks(3, 3, 1.0, 2.0, 0.2);
        let c = ClusterAssignment::from_labels(&[0, 1], ClusterKind::Components);
        assert!(GroupwiseModel::new(m, c, 1e-9).is_err());
    }
}
