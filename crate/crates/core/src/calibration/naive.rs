//! Brute-force test inversion over dense weight rows.
//!
//! Every row is materialized as a distribution and every quantile goes
//! through [`weighted_quantile`]. Quadratic or worse; meant as the reference
//! the fast paths are checked against.

use crate::base::{weighted_quantile, StepCdf};
use crate::error::Result;
use crate::forest::{conditional_cdf, cross_weight_matrix, localizer_row, Anchor, WeightVector};

use super::LcpModel;

/// `{0, 1}` together with every cumulative value of every row, sorted and
/// deduplicated. Sums that overshoot 1 by rounding are read as 1.
pub fn candidate_levels(cdfs: &[StepCdf]) -> Vec<f64> {
    let mut levels = vec![0.0, 1.0];
    for cdf in cdfs {
        levels.extend(cdf.cumulative().iter().map(|&c| c.min(1.0)));
    }
    levels.sort_by(|a, b| a.total_cmp(b));
    levels.dedup();
    levels
}

struct Rows {
    cal: Vec<WeightVector>,
    test: WeightVector,
}

fn rows(model: &LcpModel, x: &[f64]) -> Result<Rows> {
    let f = model.localizer();
    Ok(Rows { cal: cross_weight_matrix(f, x)?, test: localizer_row(f, Anchor::Test, x)? })
}

fn alpha_tilde_rows(model: &LcpModel, rows: &Rows, members: &[usize], v: f64) -> Result<f64> {
    let res = model.residuals();
    let mut points = Vec::with_capacity(members.len() + 1);
    for &i in members {
        points.push((res[i], conditional_cdf(&rows.cal[i], res, v)?));
    }
    points.push((v, conditional_cdf(&rows.test, res, v)?));
    let m = model.alpha().required_count(members.len() + 1);

    let cdfs: Vec<StepCdf> = points.iter().map(|p| p.1.clone()).collect();
    let levels = candidate_levels(&cdfs);
    let coverage = |level: f64| -> Result<usize> {
        let mut c = 0;
        for (score, cdf) in &points {
            if *score <= weighted_quantile(level, cdf)? {
                c += 1;
            }
        }
        Ok(c)
    };

    // Coverage is nondecreasing in the level. With a finite `v`, a point
    // missing from its own row can stay uncovered even at level 1; the level
    // is then 1.
    let (mut lo, mut hi) = (0, levels.len() - 1);
    if coverage(levels[hi])? < m {
        return Ok(1.0);
    }
    while lo < hi {
        let mid = (lo + hi) / 2;
        if coverage(levels[mid])? >= m {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(levels[lo])
}

/// Adapted level at `x` with test residual `v`, by binary search over the
/// candidate levels.
pub fn alpha_tilde(model: &LcpModel, x: &[f64], v: f64) -> Result<f64> {
    let members: Vec<usize> = (0..model.n_calibration()).collect();
    alpha_tilde_in(model, x, v, &members)
}

pub fn alpha_tilde_in(model: &LcpModel, x: &[f64], v: f64, members: &[usize]) -> Result<f64> {
    let rows = rows(model, x)?;
    alpha_tilde_rows(model, &rows, members, v)
}

/// Largest order statistic `v` with `v <= Q(alpha_tilde(x, v); F)`, where `F`
/// is the test row with its own mass at `+inf`; `-inf` if none qualifies.
pub fn threshold(model: &LcpModel, x: &[f64]) -> Result<f64> {
    let members: Vec<usize> = (0..model.n_calibration()).collect();
    threshold_in(model, x, &members)
}

/// As [`threshold`] with coverage counted over `members` and candidates drawn
/// from their residuals.
pub fn threshold_in(model: &LcpModel, x: &[f64], members: &[usize]) -> Result<f64> {
    Ok(accepted(model, x, members)?.into_iter().filter_map(|(v, ok)| ok.then_some(v)).fold(f64::NEG_INFINITY, f64::max))
}

/// Every candidate with its acceptance decision, in ascending order.
pub fn accepted(model: &LcpModel, x: &[f64], members: &[usize]) -> Result<Vec<(f64, bool)>> {
    let rows = rows(model, x)?;
    let res = model.residuals();
    let full = conditional_cdf(&rows.test, res, f64::INFINITY)?;
    let mut cand: Vec<f64> = members.iter().map(|&i| res[i]).collect();
    cand.sort_by(|a, b| a.total_cmp(b));
    cand.dedup();
    cand.push(f64::INFINITY);
    cand.into_iter()
        .map(|v| {
            let level = alpha_tilde_rows(model, &rows, members, v)?;
            Ok((v, v <= weighted_quantile(level, &full)?))
        })
        .collect()
}
