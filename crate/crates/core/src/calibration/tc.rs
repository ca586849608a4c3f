//! Training-conditional correction: a second calibration split picks the
//! smallest level shift on a uniform grid over `[0, alpha]` whose empirical
//! coverage on that split reaches `1 - alpha`.

use serde::{Deserialize, Serialize};

use crate::base::{Dataset, MiscoverageLevel};
use crate::error::{Error, Result};
use crate::forest::ForestParams;

use super::{covered, effective, LcpModel};

/// What the correction is added to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TcMode {
    /// The nominal level `1 - alpha` (QRF-TC).
    Qrf,
    /// The adapted level at `v = +inf` (LCP-RF-TC).
    Lcp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcConfig {
    /// Number of grid steps `K`; the grid has `K + 1` points.
    pub grid_size: usize,
    /// Slack reported with the failure probability bound.
    pub epsilon: f64,
}

impl Default for TcConfig {
    fn default() -> Self {
        Self { grid_size: 100, epsilon: 0.05 }
    }
}

impl TcConfig {
    fn check(&self) -> Result<()> {
        if self.grid_size == 0 {
            return Err(Error::domain("grid_size must be at least 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::domain("epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TcModel {
    inner: LcpModel,
    mode: TcMode,
    config: TcConfig,
    alpha_hat: f64,
    /// Whether no grid value reached the target on the second split.
    warning: bool,
    /// `(base level, calibration mass below the score)` of each second-split
    /// point.
    d2: Vec<(f64, f64)>,
}

impl TcModel {
    /// Fits the localizer on the first split and calibrates on the second.
    #[allow(clippy::too_many_arguments)]
    pub fn fit(
        d1: &Dataset,
        d1_residuals: &[f64],
        d2: &Dataset,
        d2_residuals: &[f64],
        params: &ForestParams,
        alpha: MiscoverageLevel,
        mode: TcMode,
        config: TcConfig,
    ) -> Result<Self> {
        let inner = LcpModel::fit(d1, d1_residuals, params, alpha)?;
        Self::calibrate(inner, d2, d2_residuals, mode, config)
    }

    /// Grid search on `(d2, d2_residuals)` for a model fitted elsewhere.
    pub fn calibrate(
        inner: LcpModel,
        d2: &Dataset,
        d2_residuals: &[f64],
        mode: TcMode,
        config: TcConfig,
    ) -> Result<Self> {
        config.check()?;
        if d2.n_rows() != d2_residuals.len() || d2.n_rows() == 0 {
            return Err(Error::shape("second split is empty or misaligned with its residuals"));
        }
        let mut stats = Vec::with_capacity(d2.n_rows());
        for (x, &v) in d2.rows().zip(d2_residuals) {
            if !v.is_finite() {
                return Err(Error::domain("non-finite residual in the second split"));
            }
            let q = inner.query(x)?;
            let base = match mode {
                TcMode::Qrf => 1.0 - inner.alpha.get(),
                TcMode::Lcp => q.alpha_tilde(&inner.all(), f64::INFINITY, inner.alpha),
            };
            stats.push((base, q.test_below(v)));
        }
        let mut model = Self { inner, mode, config, alpha_hat: 0.0, warning: false, d2: stats };
        let need = model.inner.alpha.required_count(model.d2.len());
        match model.grid().into_iter().find(|&a| model.covered_count(a) >= need) {
            Some(a) => model.alpha_hat = a,
            None => {
                model.alpha_hat = model.inner.alpha.get();
                model.warning = true;
                log::warn!("no grid correction reaches the target coverage; using alpha");
            }
        }
        Ok(model)
    }

    /// A model with a fixed correction and no second split.
    pub fn with_correction(inner: LcpModel, mode: TcMode, alpha_hat: f64, config: TcConfig) -> Result<Self> {
        config.check()?;
        if !(0.0..=inner.alpha.get()).contains(&alpha_hat) {
            return Err(Error::domain(format!("correction {alpha_hat} outside [0, alpha]")));
        }
        Ok(Self { inner, mode, config, alpha_hat, warning: false, d2: Vec::new() })
    }

    /// `{alpha * j / K : j = 0..=K}`.
    pub fn grid(&self) -> Vec<f64> {
        let k = self.config.grid_size;
        let a = self.inner.alpha.get();
        (0..=k).map(|j| a * j as f64 / k as f64).collect()
    }

    fn covered_count(&self, shift: f64) -> usize {
        self.d2.iter().filter(|(base, below)| covered(effective(*below), (base + shift).min(1.0))).count()
    }

    /// Empirical coverage of the second split at correction `shift`, if the
    /// model was calibrated on one.
    pub fn d2_coverage(&self, shift: f64) -> Option<f64> {
        (!self.d2.is_empty()).then(|| self.covered_count(shift) as f64 / self.d2.len() as f64)
    }

    pub fn inner(&self) -> &LcpModel {
        &self.inner
    }

    pub fn mode(&self) -> TcMode {
        self.mode
    }

    pub fn alpha_hat(&self) -> f64 {
        self.alpha_hat
    }

    pub fn warning(&self) -> bool {
        self.warning
    }

    pub fn epsilon(&self) -> f64 {
        self.config.epsilon
    }

    /// `|T| * exp(-2 n2 eps^2)`, or `None` without a second split.
    pub fn delta(&self) -> Option<f64> {
        let n2 = self.d2.len() as f64;
        let eps = self.config.epsilon;
        (!self.d2.is_empty()).then(|| (self.config.grid_size + 1) as f64 * (-2.0 * n2 * eps * eps).exp())
    }

    /// Threshold at `x` and the corrected level it was read at.
    pub fn predict_with_level(&self, x: &[f64]) -> Result<(f64, f64)> {
        let q = self.inner.query(x)?;
        let base = match self.mode {
            TcMode::Qrf => 1.0 - self.inner.alpha.get(),
            TcMode::Lcp => q.alpha_tilde(&self.inner.all(), f64::INFINITY, self.inner.alpha),
        };
        let level = (base + self.alpha_hat).min(1.0);
        Ok((q.test_quantile(level), level))
    }

    pub fn threshold(&self, x: &[f64]) -> Result<f64> {
        Ok(self.predict_with_level(x)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::split_threshold;

    fn uniform_model(residuals: &[f64], a: f64) -> LcpModel {
        let n = residuals.len();
        let data = Dataset::new((0..n).map(|i| i as f64).collect(), 1, vec![0.0; n]).unwrap();
        let p = ForestParams { n_trees: 2, min_leaf_size: Some(n), bootstrap: false, ..Default::default() };
        LcpModel::fit(&data, residuals, &p, MiscoverageLevel::new(a).unwrap()).unwrap()
    }

    #[test]
    fn grid_arithmetic() {
        let m =
            TcModel::with_correction(uniform_model(&[1.0, 2.0], 0.1), TcMode::Qrf, 0.0, TcConfig::default()).unwrap();
        let g = m.grid();
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 0.001).abs() < 1e-15);
        assert_eq!(*g.last().unwrap(), 0.1);
    }

    #[test]
    fn zero_correction_with_uniform_weights_is_split() {
        let r: Vec<f64> = (0..19).map(|i| (i as f64 * 0.37) % 1.3).collect();
        let inner = uniform_model(&r, 0.2);
        let split = split_threshold(&r, inner.alpha()).unwrap();
        for mode in [TcMode::Qrf, TcMode::Lcp] {
            let m = TcModel::with_correction(inner.clone(), mode, 0.0, TcConfig::default()).unwrap();
            assert_eq!(m.threshold(&[3.0]).unwrap(), split);
        }
    }

    #[test]
    fn deficit_forces_a_positive_correction() {
        // The first split has small residuals only; the second split's are
        // larger than most of them, so the nominal level under-covers.
        let d1: Vec<f64> = (0..40).map(|i| i as f64 / 40.0).collect();
        let inner = uniform_model(&d1, 0.2);
        let d2r: Vec<f64> = (0..40).map(|i| 0.9 + i as f64 / 400.0).collect();
        let d2 = Dataset::new(vec![0.0; 40], 1, vec![0.0; 40]).unwrap();
        let m = TcModel::calibrate(inner, &d2, &d2r, TcMode::Qrf, TcConfig { grid_size: 20, epsilon: 0.1 }).unwrap();
        assert!(m.alpha_hat() > 0.0);
        assert!(!m.warning());
        // Smallest feasible grid point.
        let need = 0.8 - 1e-12;
        assert!(m.d2_coverage(m.alpha_hat()).unwrap() >= need);
        for &g in m.grid().iter().filter(|&&g| g < m.alpha_hat()) {
            assert!(m.d2_coverage(g).unwrap() < need);
        }
        let delta = m.delta().unwrap();
        assert!((delta - 21.0 * (-2.0 * 40.0 * 0.01f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn covered_second_split_needs_no_correction() {
        let d1: Vec<f64> = (0..40).map(|i| i as f64 / 40.0).collect();
        let inner = uniform_model(&d1, 0.2);
        let d2 = Dataset::new(vec![0.0; 10], 1, vec![0.0; 10]).unwrap();
        let m = TcModel::calibrate(inner, &d2, &[0.1; 10], TcMode::Lcp, TcConfig::default()).unwrap();
        assert_eq!(m.alpha_hat(), 0.0);
    }

    #[test]
    fn infinite_atom_covers_large_scores() {
        let inner = uniform_model(&[0.0, 0.1, 0.2, 0.3], 0.1);
        let d2 = Dataset::new(vec![0.0; 5], 1, vec![0.0; 5]).unwrap();
        // Mass below 5.0 is 0.8 < 0.9, so the +inf atom already covers it.
        let m = TcModel::calibrate(inner.clone(), &d2, &[5.0; 5], TcMode::Qrf, TcConfig::default()).unwrap();
        assert!(!m.warning());
        assert_eq!(m.alpha_hat(), 0.0);
        assert_eq!(m.threshold(&[0.0]).unwrap(), f64::INFINITY);
        assert!(TcModel::with_correction(inner, TcMode::Qrf, 0.5, TcConfig::default()).is_err());
    }
}
