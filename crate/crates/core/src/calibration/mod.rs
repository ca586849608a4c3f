//! Split conformal, forest-localized (LCP-RF) and training-conditional
//! calibration of score thresholds.

mod index;
pub mod naive;
mod tc;

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::base::{empirical_split_cdf, weighted_quantile, Dataset, MiscoverageLevel};
use crate::error::{Error, Result};
use crate::forest::{Forest, ForestParams};

use index::LocalizerIndex;
pub(crate) use index::{covered, effective};
pub use tc::{TcConfig, TcMode, TcModel};

/// `Q(1 - alpha)` of the calibration residuals with an extra `+inf` atom.
pub fn split_threshold(residuals: &[f64], alpha: MiscoverageLevel) -> Result<f64> {
    weighted_quantile(1.0 - alpha.get(), &empirical_split_cdf(residuals)?)
}

/// Calibration residuals with a forest localizer fitted on them.
#[derive(Serialize, Deserialize)]
pub struct LcpModel {
    alpha: MiscoverageLevel,
    /// Fitted on `(X_i, V_i)`; its targets are the residuals.
    localizer: Forest,
    #[serde(skip)]
    index: OnceLock<LocalizerIndex>,
}

impl Clone for LcpModel {
    fn clone(&self) -> Self {
        Self { alpha: self.alpha, localizer: self.localizer.clone(), index: OnceLock::new() }
    }
}

impl fmt::Debug for LcpModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LcpModel")
            .field("alpha", &self.alpha)
            .field("n", &self.localizer.n_train())
            .field("trees", &self.localizer.n_trees())
            .finish()
    }
}

impl LcpModel {
    /// Fits the localizer on the calibration features and residuals.
    pub fn fit(features: &Dataset, residuals: &[f64], params: &ForestParams, alpha: MiscoverageLevel) -> Result<Self> {
        check_residuals(residuals)?;
        let data = features.with_targets(residuals.to_vec())?;
        Self::from_forest(Forest::fit(&data, params)?, alpha)
    }

    /// Uses an already fitted localizer whose targets are the residuals.
    pub fn from_forest(localizer: Forest, alpha: MiscoverageLevel) -> Result<Self> {
        localizer.validate()?;
        check_residuals(localizer.targets())?;
        Ok(Self { alpha, localizer, index: OnceLock::new() })
    }

    pub fn alpha(&self) -> MiscoverageLevel {
        self.alpha
    }

    pub fn with_alpha(mut self, alpha: MiscoverageLevel) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn localizer(&self) -> &Forest {
        &self.localizer
    }

    pub fn residuals(&self) -> &[f64] {
        self.localizer.targets()
    }

    pub fn n_calibration(&self) -> usize {
        self.localizer.n_train()
    }

    /// Residuals sorted ascending, followed by `+inf`.
    pub fn order_statistics(&self) -> Vec<f64> {
        let mut v = self.residuals().to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        v.push(f64::INFINITY);
        v
    }

    fn index(&self) -> &LocalizerIndex {
        self.index.get_or_init(|| LocalizerIndex::new(&self.localizer, self.residuals()))
    }

    fn query(&self, x: &[f64]) -> Result<index::Query<'_>> {
        let leaves = self.localizer.leaves_of(x)?;
        Ok(self.index().query(&leaves))
    }

    fn all(&self) -> Vec<usize> {
        (0..self.n_calibration()).collect()
    }

    fn check_members(&self, members: &[usize]) -> Result<()> {
        let n = self.n_calibration();
        if members.iter().any(|&i| i >= n) {
            return Err(Error::domain("member index outside the calibration set"));
        }
        Ok(())
    }

    /// Largest residual accepted by the test-inversion rule at `x`, `+inf`
    /// when every finite residual is accepted, `-inf` when none is.
    pub fn threshold(&self, x: &[f64]) -> Result<f64> {
        Ok(self.query(x)?.threshold(&self.all(), self.alpha))
    }

    /// As [`threshold`](Self::threshold), counting coverage over `members`
    /// only and scanning only their residuals.
    pub fn threshold_in(&self, x: &[f64], members: &[usize]) -> Result<f64> {
        self.check_members(members)?;
        Ok(self.query(x)?.threshold(members, self.alpha))
    }

    /// Adapted level at `x` when the test residual is `v`.
    pub fn alpha_tilde(&self, x: &[f64], v: f64) -> Result<f64> {
        check_v(v)?;
        Ok(self.query(x)?.alpha_tilde(&self.all(), v, self.alpha))
    }

    pub fn alpha_tilde_in(&self, x: &[f64], v: f64, members: &[usize]) -> Result<f64> {
        check_v(v)?;
        self.check_members(members)?;
        Ok(self.query(x)?.alpha_tilde(members, v, self.alpha))
    }

    /// `Q(level)` of the localized distribution at `x` with the test mass at
    /// `+inf`.
    pub fn test_quantile(&self, x: &[f64], level: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&level) {
            return Err(Error::domain(format!("quantile level {level} outside [0, 1]")));
        }
        Ok(self.query(x)?.test_quantile(level))
    }
}

fn check_residuals(residuals: &[f64]) -> Result<()> {
    if residuals.is_empty() {
        return Err(Error::domain("no calibration residuals"));
    }
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(Error::domain("non-finite calibration residual"));
    }
    Ok(())
}

fn check_v(v: f64) -> Result<()> {
    if v.is_nan() || v == f64::NEG_INFINITY {
        return Err(Error::domain(format!("invalid test residual {v}")));
    }
    Ok(())
}

/// Calibration methods that need no clustering.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibrated {
    Split {
        #[serde(with = "crate::serde_f64")]
        threshold: f64,
    },
    LcpRf(LcpModel),
    Tc(TcModel),
}

/// Threshold and, for localized methods, the adapted level at `v = +inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdReport {
    pub threshold: f64,
    pub alpha_tilde: Option<f64>,
}

pub fn predict_threshold(state: &Calibrated, x: &[f64]) -> Result<ThresholdReport> {
    match state {
        Calibrated::Split { threshold } => Ok(ThresholdReport { threshold: *threshold, alpha_tilde: None }),
        Calibrated::LcpRf(model) => {
            let q = model.query(x)?;
            let all = model.all();
            Ok(ThresholdReport {
                threshold: q.threshold(&all, model.alpha),
                alpha_tilde: Some(q.alpha_tilde(&all, f64::INFINITY, model.alpha)),
            })
        }
        Calibrated::Tc(tc) => {
            let (threshold, level) = tc.predict_with_level(x)?;
            Ok(ThresholdReport { threshold, alpha_tilde: Some(level) })
        }
    }
}
