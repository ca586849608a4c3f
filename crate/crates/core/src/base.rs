//! Shared numeric types: datasets, miscoverage levels, weighted step
//! distributions over the extended reals and prediction intervals.
//!
//! Quantiles use the left-continuous generalized inverse
//! `Q(beta; F) = inf { r : F(r) >= beta }`. Cumulative masses are compared
//! against `beta` with an absolute slack of [`QUANTILE_TOL`], so a level that
//! equals a cumulative mass in exact arithmetic (for example `9/10` against
//! `0.9`) is treated as reached even when floating-point summation lands one
//! ulp short.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute slack used when comparing cumulative masses with a level.
pub const QUANTILE_TOL: f64 = 1e-12;

/// Allowed deviation of a distribution's total mass from one.
pub const MASS_TOL: f64 = 1e-9;

/// Feature table plus target vector, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    n_rows: usize,
    n_features: usize,
    features: Vec<f64>,
    targets: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from row-major features.
    pub fn new(features: Vec<f64>, n_features: usize, targets: Vec<f64>) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::domain("dataset needs at least one feature"));
        }
        if targets.is_empty() {
            return Err(Error::domain("dataset needs at least one row"));
        }
        if features.len() != targets.len() * n_features {
            return Err(Error::shape(format!(
                "{} feature cells for {} rows of {} features",
                features.len(),
                targets.len(),
                n_features
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite feature at row {} column {}",
                pos / n_features,
                pos % n_features
            )));
        }
        if let Some(pos) = targets.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite target at row {pos}")));
        }
        Ok(Self { n_rows: targets.len(), n_features, features, targets })
    }

    pub fn from_rows(rows: &[Vec<f64>], targets: Vec<f64>) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::shape("ragged feature rows"));
        }
        Self::new(rows.concat(), d, targets)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.n_features)
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn feature(&self, i: usize, j: usize) -> f64 {
        self.features[i * self.n_features + j]
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            targets.push(self.targets[i]);
        }
        Self::new(features, self.n_features, targets)
    }

    /// Same features with a different target vector.
    pub fn with_targets(&self, targets: Vec<f64>) -> Result<Self> {
        if targets.len() != self.n_rows {
            return Err(Error::shape(format!("{} targets for {} rows", targets.len(), self.n_rows)));
        }
        Self::new(self.features.clone(), self.n_features, targets)
    }
}

/// Miscoverage rate `alpha`, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct MiscoverageLevel(f64);

impl MiscoverageLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Self(alpha))
        } else {
            Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// Smallest count `m` out of `total` with `m / total >= 1 - alpha`.
    ///
    /// The product is nudged down by a relative 1e-9 so that, e.g.,
    /// `0.9 * 10` does not round up to 10.
    pub fn required_count(self, total: usize) -> usize {
        let target = (1.0 - self.0) * total as f64;
        let m = (target - 1e-9 * target.max(1.0)).ceil();
        (m.max(0.0) as usize).min(total)
    }
}

impl TryFrom<f64> for MiscoverageLevel {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MiscoverageLevel> for f64 {
    fn from(a: MiscoverageLevel) -> f64 {
        a.0
    }
}

/// One point mass of a [`StepCdf`]: `(location, mass)`.
pub type Atom = (f64, f64);

/// Sorts atoms by location and merges equal locations by summing their mass.
pub fn merge_duplicates(mut atoms: Vec<Atom>) -> Result<Vec<Atom>> {
    for &(loc, mass) in &atoms {
        if loc.is_nan() || loc == f64::NEG_INFINITY {
            return Err(Error::domain(format!("invalid atom location {loc}")));
        }
        if !(mass >= 0.0) || !mass.is_finite() {
            return Err(Error::domain(format!("invalid atom mass {mass}")));
        }
    }
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
    // Duplicate runs are summed with compensation.
    let mut comp = 0.0;
    for (loc, mass) in atoms {
        match merged.last_mut() {
            Some(last) if last.0 == loc => {
                let y = mass - comp;
                let t = last.1 + y;
                comp = (t - last.1) - y;
                last.1 = t;
            }
            _ => {
                comp = 0.0;
                merged.push((loc, mass));
            }
        }
    }
    Ok(merged)
}

/// Weighted discrete distribution over `(-inf, +inf]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCdf {
    atoms: Vec<Atom>,
    cum: Vec<f64>,
}

impl StepCdf {
    /// Validates, sorts and merges `atoms`; the masses must sum to one.
    pub fn from_atoms(atoms: Vec<Atom>) -> Result<Self> {
        let atoms = merge_duplicates(atoms)?;
        if atoms.is_empty() {
            return Err(Error::domain("distribution without atoms"));
        }
        let cum = cumulative(&atoms);
        let total = *cum.last().expect("non-empty");
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::domain(format!("masses sum to {total}, expected 1")));
        }
        Ok(Self { atoms, cum })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// Cumulative mass up to and including each atom.
    pub fn cumulative(&self) -> &[f64] {
        &self.cum
    }

    /// `F(r)`: total mass at locations `<= r`.
    pub fn eval(&self, r: f64) -> f64 {
        let idx = self.atoms.partition_point(|a| a.0 <= r);
        if idx == 0 {
            0.0
        } else {
            self.cum[idx - 1]
        }
    }

    /// Mass strictly below `r`, or `None` when no atom lies below `r`.
    pub fn mass_below(&self, r: f64) -> Option<f64> {
        let idx = self.atoms.partition_point(|a| a.0 < r);
        (idx > 0).then(|| self.cum[idx - 1])
    }

    pub fn quantile(&self, beta: f64) -> Result<f64> {
        weighted_quantile(beta, self)
    }
}

fn cumulative(atoms: &[Atom]) -> Vec<f64> {
    let mut out = Vec::with_capacity(atoms.len());
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &(_, m) in atoms {
        let y = m - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        // Compensation can wobble by an ulp; keep the sequence monotone.
        let prev = out.last().copied().unwrap_or(0.0);
        out.push(sum.max(prev));
    }
    out
}

/// `inf { r : F(r) >= beta }` over the atoms of `cdf`.
///
/// Returns the first atom whose cumulative mass reaches `beta - QUANTILE_TOL`;
/// if rounding leaves the total short of `beta`, the last atom is returned.
pub fn weighted_quantile(beta: f64, cdf: &StepCdf) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::domain(format!("quantile level {beta} outside [0, 1]")));
    }
    let target = beta - QUANTILE_TOL;
    let idx = cdf.cum.partition_point(|&c| c < target);
    let idx = idx.min(cdf.atoms.len() - 1);
    Ok(cdf.atoms[idx].0)
}

/// Empirical distribution of `residuals` with an extra `+inf` atom, each of
/// mass `1 / (n + 1)`.
pub fn empirical_split_cdf(residuals: &[f64]) -> Result<StepCdf> {
    if residuals.is_empty() {
        return Err(Error::domain("no residuals"));
    }
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(Error::domain("non-finite residual"));
    }
    let mass = 1.0 / (residuals.len() + 1) as f64;
    let atoms = residuals.iter().map(|&r| (r, mass)).chain(std::iter::once((f64::INFINITY, mass))).collect();
    StepCdf::from_atoms(atoms)
}

/// Prediction interval on the extended real line.
///
/// An empty interval is represented by `lower > upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub center: f64,
    pub radius: f64,
}

impl Interval {
    pub fn empty(center: f64, radius: f64) -> Self {
        Self { lower: f64::INFINITY, upper: f64::NEG_INFINITY, center, radius }
    }

    pub fn is_empty(&self) -> bool {
        self.lower > self.upper
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }

    /// `upper - lower`, zero when empty and `+inf` when unbounded.
    pub fn length(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.upper - self.lower
        }
    }

    pub fn is_finite(&self) -> bool {
        self.is_empty() || (self.lower.is_finite() && self.upper.is_finite())
    }
}
