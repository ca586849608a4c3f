//! Localizer weight rows with a test-point slot.
//!
//! The test point joins every leaf it falls in with bootstrap count one, and
//! that leaf's population grows by one for that tree. Each row, anchored at a
//! calibration point or at the test point, is then a probability vector over
//! the `n` calibration slots plus the test slot at index `n`.

use crate::base::{StepCdf, MASS_TOL};
use crate::error::{Error, Result};

use super::Forest;

/// Which point a weight row is anchored at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    /// Calibration (training) row `i` of the forest.
    Calibration(usize),
    Test,
}

/// Weights over calibration slots `0..n` plus the test slot `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    weights: Vec<f64>,
}

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::domain("weight vector without slots"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::domain("negative or non-finite weight"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::domain(format!("weights sum to {total}")));
        }
        Ok(Self { weights })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    /// The first `n` entries.
    pub fn calibration(&self) -> &[f64] {
        &self.weights[..self.weights.len() - 1]
    }

    pub fn test_mass(&self) -> f64 {
        self.weights[self.weights.len() - 1]
    }

    /// Indices and values of nonzero entries.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights.iter().copied().enumerate().filter(|(_, w)| *w > 0.0)
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

fn row_with_test_leaves(forest: &Forest, anchor: Anchor, test_leaves: &[usize]) -> WeightVector {
    let n = forest.n_train();
    let k = forest.n_trees() as f64;
    let mut w = vec![0.0; n + 1];
    for (tree, &test_leaf) in forest.trees().iter().zip(test_leaves) {
        let leaf_id = match anchor {
            Anchor::Calibration(i) => tree.row_leaf(i),
            Anchor::Test => test_leaf,
        };
        let leaf = &tree.leaves()[leaf_id];
        let shared = leaf_id == test_leaf;
        let denom = k * (leaf.total + shared as u32) as f64;
        for (&j, &c) in leaf.members.iter().zip(&leaf.counts) {
            w[j] += c as f64 / denom;
        }
        if shared {
            w[n] += 1.0 / denom;
        }
    }
    WeightVector { weights: w }
}

/// Weight row of `anchor` when `x_test` occupies the test slot.
pub fn localizer_row(forest: &Forest, anchor: Anchor, x_test: &[f64]) -> Result<WeightVector> {
    if let Anchor::Calibration(i) = anchor {
        if i >= forest.n_train() {
            return Err(Error::domain(format!("calibration index {i} out of range")));
        }
    }
    let test_leaves = forest.leaves_of(x_test)?;
    Ok(row_with_test_leaves(forest, anchor, &test_leaves))
}

/// Rows `localizer_row(forest, Calibration(i), x_test)` for every `i`.
pub fn cross_weight_matrix(forest: &Forest, x_test: &[f64]) -> Result<Vec<WeightVector>> {
    let test_leaves = forest.leaves_of(x_test)?;
    Ok((0..forest.n_train()).map(|i| row_with_test_leaves(forest, Anchor::Calibration(i), &test_leaves)).collect())
}

/// Distribution with the row's calibration masses at `residuals` and the test
/// mass at `v`. Zero-mass slots are dropped.
pub fn conditional_cdf(row: &WeightVector, residuals: &[f64], v: f64) -> Result<StepCdf> {
    if row.weights.len() != residuals.len() + 1 {
        return Err(Error::shape(format!(
            "weight row has {} slots for {} residuals",
            row.weights.len(),
            residuals.len()
        )));
    }
    let mut atoms: Vec<(f64, f64)> =
        residuals.iter().zip(row.calibration()).filter(|(_, w)| **w > 0.0).map(|(&r, &w)| (r, w)).collect();
    if row.test_mass() > 0.0 {
        atoms.push((v, row.test_mass()));
    }
    StepCdf::from_atoms(atoms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::{empirical_split_cdf, Dataset};
    use crate::forest::{ForestParams, Leaf, Node, Tree};

    fn uniform_forest(n: usize) -> Forest {
        let x: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let data = Dataset::new(x, 1, vec![0.0; n]).unwrap();
        let p = ForestParams { n_trees: 2, min_leaf_size: Some(n), bootstrap: false, ..Default::default() };
        Forest::fit(&data, &p).unwrap()
    }

    /// Left leaf {0,1,2} below 0.5, right leaf {3,4} above.
    fn two_leaf_forest() -> Forest {
        let x = vec![0.1, 0.2, 0.3, 0.7, 0.8];
        let data = Dataset::new(x, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let tree = Tree::from_parts(
            vec![Node::Split { feature: 0, threshold: 0.5, left: 1, right: 2 }, Node::Leaf(0), Node::Leaf(1)],
            vec![
                Leaf::from_members(vec![0, 1, 2], vec![1, 1, 1]).unwrap(),
                Leaf::from_members(vec![3, 4], vec![1, 1]).unwrap(),
            ],
        )
        .unwrap();
        Forest::from_trees(vec![tree], &data).unwrap()
    }

    #[test]
    fn uniform_leaf_gives_uniform_rows() {
        let f = uniform_forest(9);
        let row = localizer_row(&f, Anchor::Calibration(3), &[0.5]).unwrap();
        assert!(row.as_slice().iter().all(|&w| (w - 0.1).abs() < 1e-15));
        for row in cross_weight_matrix(&f, &[0.2]).unwrap() {
            assert!(row.as_slice().iter().all(|&w| (w - 0.1).abs() < 1e-15));
        }
    }

    #[test]
    fn test_in_other_leaf_gets_no_mass() {
        let f = two_leaf_forest();
        let row = localizer_row(&f, Anchor::Calibration(0), &[0.9]).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(row.as_slice(), &[third, third, third, 0.0, 0.0, 0.0]);

        let row = localizer_row(&f, Anchor::Calibration(3), &[0.9]).unwrap();
        assert_eq!(row.as_slice(), &[0.0, 0.0, 0.0, third, third, third]);
    }

    #[test]
    fn block_structure_of_cross_matrix() {
        let f = two_leaf_forest();
        let m = cross_weight_matrix(&f, &[0.25]).unwrap();
        for (i, row) in m.iter().enumerate() {
            let w = row.as_slice();
            if i < 3 {
                assert!(w[..3].iter().all(|&v| v == 0.25));
                assert_eq!(w[5], 0.25);
                assert!(w[3..5].iter().all(|&v| v == 0.0));
            } else {
                assert!(w[..3].iter().all(|&v| v == 0.0));
                assert!(w[3..5].iter().all(|&v| v == 0.5));
                assert_eq!(w[5], 0.0);
            }
        }
    }

    #[test]
    fn test_anchor_matches_calibration_anchor_in_same_leaves() {
        let f = two_leaf_forest();
        let test = localizer_row(&f, Anchor::Test, &[0.2]).unwrap();
        let cal = localizer_row(&f, Anchor::Calibration(1), &[0.2]).unwrap();
        assert_eq!(test, cal);
    }

    #[test]
    fn uniform_row_reproduces_split_cdf() {
        let f = uniform_forest(9);
        let residuals: Vec<f64> = (0..9).map(|i| (i as f64).sqrt()).collect();
        let row = localizer_row(&f, Anchor::Test, &[0.0]).unwrap();
        let got = conditional_cdf(&row, &residuals, f64::INFINITY).unwrap();
        assert_eq!(got, empirical_split_cdf(&residuals).unwrap());
    }

    #[test]
    fn conditional_cdf_merges_test_atom() {
        let row = WeightVector::new(vec![0.25; 4]).unwrap();
        let f = conditional_cdf(&row, &[1.0, 2.0, 3.0], 2.0).unwrap();
        assert_eq!(f.atoms(), &[(1.0, 0.25), (2.0, 0.5), (3.0, 0.25)]);
        assert!(conditional_cdf(&row, &[1.0], 2.0).is_err());
    }

    #[test]
    fn zero_test_mass_ignores_v() {
        let row = WeightVector::new(vec![0.5, 0.5, 0.0]).unwrap();
        let a = conditional_cdf(&row, &[1.0, 2.0], -5.0).unwrap();
        let b = conditional_cdf(&row, &[1.0, 2.0], f64::INFINITY).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_anchor_or_dimension() {
        let f = two_leaf_forest();
        assert!(localizer_row(&f, Anchor::Calibration(5), &[0.1]).is_err());
        assert!(matches!(localizer_row(&f, Anchor::Test, &[0.1, 0.2]), Err(Error::Shape(_))));
    }
}
