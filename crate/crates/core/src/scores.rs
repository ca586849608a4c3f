//! Nonconformity scores and their inversion into intervals.

use serde::{Deserialize, Serialize};

use crate::base::{Dataset, Interval};
use crate::error::{Error, Result};
use crate::forest::{Forest, ForestParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// `|y - mu(x)|`.
    MeanAbsolute,
    /// `max(q_lo(x) - y, y - q_hi(x))`, the conformalized quantile score.
    QuantilePair { beta_lo: f64, beta_hi: f64 },
}

impl ScoreKind {
    /// Quantile pair at `alpha / 2` and `1 - alpha / 2`.
    pub fn quantile_for(alpha: f64) -> Self {
        ScoreKind::QuantilePair { beta_lo: alpha / 2.0, beta_hi: 1.0 - alpha / 2.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ScoreKind::MeanAbsolute => Ok(()),
            ScoreKind::QuantilePair { beta_lo, beta_hi } => {
                if 0.0 < beta_lo && beta_lo < beta_hi && beta_hi < 1.0 {
                    Ok(())
                } else {
                    Err(Error::domain(format!("quantile pair ({beta_lo}, {beta_hi}) must satisfy 0 < lo < hi < 1")))
                }
            }
        }
    }
}

/// Base-model output at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PointPrediction {
    Mean(f64),
    Band { lo: f64, hi: f64 },
}

impl PointPrediction {
    pub fn score(self, y: f64) -> f64 {
        match self {
            PointPrediction::Mean(mu) => (y - mu).abs(),
            PointPrediction::Band { lo, hi } => (lo - y).max(y - hi),
        }
    }

    /// `{ y : score(y) <= threshold }`.
    pub fn invert(self, threshold: f64) -> Interval {
        match self {
            PointPrediction::Mean(mu) => {
                if threshold < 0.0 {
                    Interval::empty(mu, threshold)
                } else {
                    Interval { lower: mu - threshold, upper: mu + threshold, center: mu, radius: threshold }
                }
            }
            PointPrediction::Band { lo, hi } => {
                let center = 0.5 * (lo + hi);
                if threshold == f64::INFINITY {
                    return Interval { lower: f64::NEG_INFINITY, upper: f64::INFINITY, center, radius: threshold };
                }
                let (lower, upper) = (lo - threshold, hi + threshold);
                if lower > upper || threshold == f64::NEG_INFINITY {
                    Interval::empty(center, threshold)
                } else {
                    Interval { lower, upper, center, radius: threshold }
                }
            }
        }
    }
}

/// A fitted base model. It must be trained on the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BasePredictor {
    MeanForest(Forest),
    QuantileForest { forest: Forest, beta_lo: f64, beta_hi: f64 },
}

impl BasePredictor {
    pub fn fit(kind: ScoreKind, train: &Dataset, params: &ForestParams) -> Result<Self> {
        kind.validate()?;
        let forest = Forest::fit(train, params)?;
        Ok(match kind {
            ScoreKind::MeanAbsolute => BasePredictor::MeanForest(forest),
            ScoreKind::QuantilePair { beta_lo, beta_hi } => BasePredictor::QuantileForest { forest, beta_lo, beta_hi },
        })
    }

    pub fn kind(&self) -> ScoreKind {
        match *self {
            BasePredictor::MeanForest(_) => ScoreKind::MeanAbsolute,
            BasePredictor::QuantileForest { beta_lo, beta_hi, .. } => ScoreKind::QuantilePair { beta_lo, beta_hi },
        }
    }

    pub fn forest(&self) -> &Forest {
        match self {
            BasePredictor::MeanForest(f) | BasePredictor::QuantileForest { forest: f, .. } => f,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<PointPrediction> {
        match self {
            BasePredictor::MeanForest(f) => Ok(PointPrediction::Mean(f.predict_mean(x)?)),
            BasePredictor::QuantileForest { forest, beta_lo, beta_hi } => {
                let lo = forest.predict_quantile(x, *beta_lo)?;
                let hi = forest.predict_quantile(x, *beta_hi)?;
                Ok(PointPrediction::Band { lo, hi })
            }
        }
    }

    pub fn score(&self, x: &[f64], y: f64) -> Result<f64> {
        Ok(self.predict(x)?.score(y))
    }

    pub fn invert(&self, x: &[f64], threshold: f64) -> Result<Interval> {
        Ok(self.predict(x)?.invert(threshold))
    }
}
