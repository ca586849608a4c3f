//! Coverage, length and oracle-distance metrics over a test set.

use serde::{Deserialize, Serialize};

use crate::base::Interval;
use crate::error::{Error, Result};

/// One evaluated test point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRow {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
    pub covered: bool,
    pub radius: f64,
    pub alpha_tilde: Option<f64>,
    pub region: Option<String>,
    pub err: Option<f64>,
    pub errhat: Option<f64>,
}

/// Extra per-point annotations that do not affect the metrics.
#[derive(Debug, Clone, Default)]
pub struct Annotations {
    pub alpha_tilde: Vec<Option<f64>>,
    pub region: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_test: usize,
    pub coverage: f64,
    /// Over finite intervals only; `None` if there are none.
    pub mean_length: Option<f64>,
    pub median_length: Option<f64>,
    pub n_infinite: usize,
    pub lengths: Vec<f64>,
    pub err: Vec<f64>,
    pub errhat: Vec<f64>,
    /// Finite points whose err denominator was zero.
    pub err_skipped: usize,
    pub errhat_skipped: usize,
    #[serde(skip)]
    pub rows: Vec<PointRow>,
}

impl EvalReport {
    pub fn median_err(&self) -> Option<f64> {
        median(&self.err)
    }

    pub fn median_errhat(&self) -> Option<f64> {
        median(&self.errhat)
    }

    /// Per-point rows with the fixed column set.
    pub fn write_rows<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["index", "lower", "upper", "covered", "radius", "alpha_tilde", "region", "err", "errhat"])
            .map_err(io)?;
        let opt = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.index.to_string(),
                format!("{:?}", r.lower),
                format!("{:?}", r.upper),
                u8::from(r.covered).to_string(),
                format!("{:?}", r.radius),
                opt(r.alpha_tilde),
                r.region.clone().unwrap_or_default(),
                opt(r.err),
                opt(r.errhat),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn rel(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| (num - den).abs() / den)
}

/// Scores `intervals` against `y`.
///
/// `residuals` holds the true scores `|y - mu_hat(x)|` of the test points and
/// `oracle` the oracle radii when the data law is known. Points with an
/// infinite interval contribute to coverage but not to any distribution.
pub fn evaluate(
    intervals: &[Interval],
    y: &[f64],
    residuals: &[f64],
    oracle: Option<&[f64]>,
    notes: &Annotations,
) -> Result<EvalReport> {
    let n = intervals.len();
    if y.len() != n || residuals.len() != n || oracle.is_some_and(|o| o.len() != n) {
        return Err(Error::shape("evaluation inputs have different lengths"));
    }
    if n == 0 {
        return Err(Error::domain("no test points"));
    }
    if (!notes.alpha_tilde.is_empty() && notes.alpha_tilde.len() != n)
        || (!notes.region.is_empty() && notes.region.len() != n)
    {
        return Err(Error::shape("annotations do not match the test set"));
    }
    let mut rep = EvalReport {
        n_test: n,
        coverage: 0.0,
        mean_length: None,
        median_length: None,
        n_infinite: 0,
        lengths: Vec::new(),
        err: Vec::new(),
        errhat: Vec::new(),
        err_skipped: 0,
        errhat_skipped: 0,
        rows: Vec::with_capacity(n),
    };
    let mut hits = 0usize;
    for (i, iv) in intervals.iter().enumerate() {
        let covered = iv.contains(y[i]);
        hits += usize::from(covered);
        let (mut err, mut errhat) = (None, None);
        if iv.is_finite() {
            rep.lengths.push(iv.length());
            if let Some(o) = oracle {
                err = rel(iv.radius, o[i]);
                match err {
                    Some(e) => rep.err.push(e),
                    None => rep.err_skipped += 1,
                }
            }
            errhat = rel(iv.radius, residuals[i]);
            match errhat {
                Some(e) => rep.errhat.push(e),
                None => rep.errhat_skipped += 1,
            }
        } else {
            rep.n_infinite += 1;
        }
        rep.rows.push(PointRow {
            index: i,
            lower: iv.lower,
            upper: iv.upper,
            covered,
            radius: iv.radius,
            alpha_tilde: notes.alpha_tilde.get(i).copied().flatten(),
            region: notes.region.get(i).cloned().flatten(),
            err,
            errhat,
        });
    }
    rep.coverage = hits as f64 / n as f64;
    if !rep.lengths.is_empty() {
        rep.mean_length = Some(rep.lengths.iter().sum::<f64>() / rep.lengths.len() as f64);
        rep.median_length = median(&rep.lengths);
    }
    Ok(rep)
}

/// Midpoint median; `None` when empty.
pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let h = s.len() / 2;
    Some(if s.len() % 2 == 1 { s[h] } else { 0.5 * (s[h - 1] + s[h]) })
}

/// Average ranks, ties sharing the mean of their positions (1-based).
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation. `None` when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - mean) * (y - mean);
        saa += (x - mean).powi(2);
        sbb += (y - mean).powi(2);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}
