//! Precomputed leaf statistics and per-query state behind the fast LCP paths.
//!
//! A weight row changes with the test point only through the trees in which
//! the test point shares the anchor's leaf ("co-located" trees): there the
//! leaf population grows by one and the test slot gains mass. Rows of
//! calibration points that never share a leaf with the test point are fixed
//! and precomputed once per model; the others are corrected tree by tree.
//!
//! Mass-below values equal to zero mean "no atom below" and are mapped to
//! `-inf` before comparison, so a point with nothing below it is covered at
//! every level, including level 0.

use std::sync::OnceLock;

use crate::base::{MiscoverageLevel, QUANTILE_TOL};
use crate::forest::Forest;

/// Mass below a point, with "no atom below" mapped to `-inf`.
#[inline]
pub(crate) fn effective(mass_below: f64) -> f64 {
    if mass_below == 0.0 {
        f64::NEG_INFINITY
    } else {
        mass_below
    }
}

/// Whether a point with effective mass `below` under it lies at or below the
/// quantile at `level`.
#[inline]
pub(crate) fn covered(below: f64, level: f64) -> bool {
    below < level - QUANTILE_TOL
}

/// Index of the first entry of a nondecreasing `thresholds` sequence that
/// covers a point with effective mass `below`.
#[inline]
fn first_covering(thresholds: &[f64], below: f64) -> usize {
    thresholds.partition_point(|&t| !covered(below, t))
}

struct LeafStats {
    /// Member residuals, ascending (one entry per distinct member).
    res: Vec<f64>,
    /// Cumulative bootstrap counts aligned with `res`.
    cum: Vec<u32>,
    total: u32,
    /// Calibration rows routed into the leaf, in or out of bag.
    routed: Vec<usize>,
}

impl LeafStats {
    fn count_below(&self, r: f64) -> u32 {
        let idx = self.res.partition_point(|&v| v < r);
        if idx == 0 {
            0
        } else {
            self.cum[idx - 1]
        }
    }

    fn count_at_most(&self, r: f64) -> u32 {
        let idx = self.res.partition_point(|&v| v <= r);
        if idx == 0 {
            0
        } else {
            self.cum[idx - 1]
        }
    }

    fn counts(&self) -> impl Iterator<Item = (f64, u32)> + '_ {
        self.res.iter().zip(&self.cum).scan(0u32, |prev, (&r, &c)| {
            let m = c - *prev;
            *prev = c;
            Some((r, m))
        })
    }
}

/// Cumulative masses of one row over its distinct support locations.
pub(crate) struct RowCum {
    locs: Vec<f64>,
    cum: Vec<f64>,
}

impl RowCum {
    fn from_masses(mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut locs: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut cum: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut sum = 0.0;
        for (loc, m) in pairs {
            sum += m;
            if locs.last() == Some(&loc) {
                *cum.last_mut().expect("paired") = sum;
            } else {
                locs.push(loc);
                cum.push(sum);
            }
        }
        Self { locs, cum }
    }

    /// Mass at locations `<= r`.
    fn at_most(&self, r: f64) -> f64 {
        let idx = self.locs.partition_point(|&v| v <= r);
        if idx == 0 {
            0.0
        } else {
            self.cum[idx - 1]
        }
    }

    /// Mass strictly below `r`.
    fn below(&self, r: f64) -> f64 {
        let idx = self.locs.partition_point(|&v| v < r);
        if idx == 0 {
            0.0
        } else {
            self.cum[idx - 1]
        }
    }

    /// Smallest cumulative value `g` with `g - QUANTILE_TOL > c`.
    fn successor(&self, c: f64) -> Option<f64> {
        let idx = self.cum.partition_point(|&v| !(v - QUANTILE_TOL > c));
        self.cum.get(idx).copied()
    }
}

pub(crate) struct LocalizerIndex {
    n: usize,
    k: usize,
    residuals: Vec<f64>,
    trees: Vec<Vec<LeafStats>>,
    row_leaf: Vec<Vec<usize>>,
    /// `below_cnt[i * k + l]`: bootstrap count in row `i`'s leaf of tree `l`
    /// with residual strictly below `residuals[i]`.
    below_cnt: Vec<u32>,
    /// Mass below `residuals[i]` in row `i` when the test point is elsewhere.
    base_below: Vec<f64>,
    rows: OnceLock<Vec<RowCum>>,
}

impl LocalizerIndex {
    pub fn new(forest: &Forest, residuals: &[f64]) -> Self {
        let n = residuals.len();
        let k = forest.n_trees();
        let mut trees = Vec::with_capacity(k);
        let mut row_leaf = Vec::with_capacity(k);
        for tree in forest.trees() {
            let mut stats: Vec<LeafStats> = tree
                .leaves()
                .iter()
                .map(|leaf| {
                    let mut pairs: Vec<(f64, u32)> =
                        leaf.members.iter().zip(&leaf.counts).map(|(&j, &c)| (residuals[j], c)).collect();
                    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                    let mut acc = 0;
                    let cum = pairs
                        .iter()
                        .map(|p| {
                            acc += p.1;
                            acc
                        })
                        .collect();
                    LeafStats {
                        res: pairs.into_iter().map(|p| p.0).collect(),
                        cum,
                        total: leaf.total,
                        routed: Vec::new(),
                    }
                })
                .collect();
            let leaves: Vec<usize> = (0..n).map(|i| tree.row_leaf(i)).collect();
            for (i, &l) in leaves.iter().enumerate() {
                stats[l].routed.push(i);
            }
            trees.push(stats);
            row_leaf.push(leaves);
        }

        let kf = k as f64;
        let mut below_cnt = vec![0u32; n * k];
        let mut base_below = vec![0.0; n];
        for i in 0..n {
            let mut sum = 0.0;
            for l in 0..k {
                let leaf = &trees[l][row_leaf[l][i]];
                let c = leaf.count_below(residuals[i]);
                below_cnt[i * k + l] = c;
                sum += c as f64 / (kf * leaf.total as f64);
            }
            base_below[i] = sum;
        }

        Self { n, k, residuals: residuals.to_vec(), trees, row_leaf, below_cnt, base_below, rows: OnceLock::new() }
    }

    /// Cumulative masses of every calibration row with the test point absent.
    /// Only the candidate-level search needs these, so they are built lazily.
    fn rows(&self) -> &[RowCum] {
        self.rows.get_or_init(|| {
            let kf = self.k as f64;
            (0..self.n)
                .map(|i| {
                    let mut pairs = Vec::new();
                    for l in 0..self.k {
                        let leaf = &self.trees[l][self.row_leaf[l][i]];
                        let denom = kf * leaf.total as f64;
                        pairs.extend(leaf.counts().map(|(r, c)| (r, c as f64 / denom)));
                    }
                    RowCum::from_masses(pairs)
                })
                .collect()
        })
    }

    /// Per-query state for the test point with leaves `test_leaves`.
    pub fn query(&self, test_leaves: &[usize]) -> Query<'_> {
        let kf = self.k as f64;
        let mut test_pairs = Vec::new();
        let mut test_mass = 0.0;
        let mut slot = vec![usize::MAX; self.n];
        let mut affected: Vec<Affected> = Vec::new();

        for (l, &leaf_id) in test_leaves.iter().enumerate() {
            let leaf = &self.trees[l][leaf_id];
            let with_test = kf * (leaf.total + 1) as f64;
            let without = kf * leaf.total as f64;
            let shrink = 1.0 / without - 1.0 / with_test;
            test_mass += 1.0 / with_test;
            test_pairs.extend(leaf.counts().map(|(r, c)| (r, c as f64 / with_test)));
            for &i in &leaf.routed {
                if slot[i] == usize::MAX {
                    slot[i] = affected.len();
                    affected.push(Affected { row: i, trees: Vec::new(), test_mass: 0.0, shrink_below: 0.0 });
                }
                let a = &mut affected[slot[i]];
                a.trees.push(l);
                a.test_mass += 1.0 / with_test;
                a.shrink_below += self.below_cnt[i * self.k + l] as f64 * shrink;
            }
        }

        Query {
            index: self,
            test_leaves: test_leaves.to_vec(),
            test_row: RowCum::from_masses(test_pairs),
            test_mass,
            slot,
            affected,
        }
    }
}

/// A calibration row that shares at least one leaf with the test point.
struct Affected {
    row: usize,
    /// Co-located trees.
    trees: Vec<usize>,
    /// Test-slot mass of the row.
    test_mass: f64,
    /// Reduction of the mass below the row's own residual caused by the
    /// larger leaf populations.
    shrink_below: f64,
}

pub(crate) struct Query<'a> {
    index: &'a LocalizerIndex,
    test_leaves: Vec<usize>,
    /// Calibration masses of the test row.
    test_row: RowCum,
    /// Test-slot mass of the test row.
    test_mass: f64,
    /// Position of each calibration row in `affected`, or `usize::MAX`.
    slot: Vec<usize>,
    affected: Vec<Affected>,
}

impl Query<'_> {
    /// Calibration mass of the test row strictly below `v`.
    pub fn test_below(&self, v: f64) -> f64 {
        self.test_row.below(v)
    }

    /// `Q(level; F)` where `F` puts the test mass at `+inf`.
    pub fn test_quantile(&self, level: f64) -> f64 {
        let target = level - QUANTILE_TOL;
        let idx = self.test_row.cum.partition_point(|&c| c < target);
        self.test_row.locs.get(idx).copied().unwrap_or(f64::INFINITY)
    }

    /// Mass below `residuals[i]` in row `i` when the test residual is `v`.
    fn row_below(&self, i: usize, v: f64) -> f64 {
        let idx = self.index;
        match self.slot[i] {
            usize::MAX => idx.base_below[i],
            s => {
                let a = &self.affected[s];
                let base = idx.base_below[i] - a.shrink_below;
                if v < idx.residuals[i] {
                    base + a.test_mass
                } else {
                    base
                }
            }
        }
    }

    /// Mass at locations `<= r` among the calibration slots of affected row `a`.
    fn affected_at_most(&self, a: &Affected, rows: &[RowCum], r: f64) -> f64 {
        let idx = self.index;
        let kf = idx.k as f64;
        let mut mass = rows[a.row].at_most(r);
        for &l in &a.trees {
            let leaf = &idx.trees[l][self.test_leaves[l]];
            let shrink = 1.0 / (kf * leaf.total as f64) - 1.0 / (kf * (leaf.total + 1) as f64);
            mass -= leaf.count_at_most(r) as f64 * shrink;
        }
        mass
    }

    /// Largest order statistic accepted by the test-inversion rule, with the
    /// coverage count restricted to `members` (denominator `|members| + 1`).
    ///
    /// `V_(k)` is accepted iff fewer than `m` members `i` satisfy
    /// `below_i(V_(k)) < theta_k - tol`, where `theta_k` is the test row's mass
    /// below `V_(k)`. Each member contributes to a union of at most two
    /// contiguous ranges of `k`, so all counts follow from one difference
    /// array.
    pub fn threshold(&self, members: &[usize], alpha: MiscoverageLevel) -> f64 {
        let idx = self.index;
        let mut cand: Vec<f64> = members.iter().map(|&i| idx.residuals[i]).collect();
        cand.sort_by(|a, b| a.total_cmp(b));
        cand.push(f64::INFINITY);
        let theta: Vec<f64> = cand.iter().map(|&v| effective(self.test_below(v))).collect();
        let m = alpha.required_count(members.len() + 1) as i64;

        let slots = cand.len();
        let mut diff = vec![0i64; slots + 1];
        for &i in members {
            match self.slot[i] {
                usize::MAX => diff[first_covering(&theta, effective(idx.base_below[i]))] += 1,
                s => {
                    let a = &self.affected[s];
                    let base = idx.base_below[i] - a.shrink_below;
                    // Candidates below the row's residual put the test atom
                    // under it.
                    let split = cand.partition_point(|&c| c < idx.residuals[i]);
                    let lower = first_covering(&theta, effective(base + a.test_mass));
                    if lower < split {
                        diff[lower] += 1;
                        diff[split] -= 1;
                    }
                    diff[first_covering(&theta, effective(base)).max(split)] += 1;
                }
            }
        }

        let mut count = 0i64;
        let mut best = None;
        for (k, d) in diff.iter().take(slots).enumerate() {
            count += d;
            if count < m {
                best = Some(k);
            }
        }
        best.map_or(f64::NEG_INFINITY, |k| cand[k])
    }

    /// Smallest candidate level meeting the coverage condition when the test
    /// residual is `v`, with the count restricted to `members`.
    ///
    /// The coverage count at level `g` is the number of points whose
    /// effective mass below is `< g - tol`; it reaches `m` exactly when `g`
    /// exceeds the `m`-th smallest of those masses by more than `tol`. The
    /// answer is the smallest cumulative value of any participating row above
    /// that point.
    pub fn alpha_tilde(&self, members: &[usize], v: f64, alpha: MiscoverageLevel) -> f64 {
        let idx = self.index;
        let m = alpha.required_count(members.len() + 1);
        let mut below: Vec<f64> = members.iter().map(|&i| effective(self.row_below(i, v))).collect();
        below.push(effective(self.test_below(v)));
        let (_, c, _) = below.select_nth_unstable_by(m - 1, |a, b| a.total_cmp(b));
        let c = *c;
        if c == f64::NEG_INFINITY {
            return 0.0;
        }

        let rows = idx.rows();
        let mut best = if 1.0 - QUANTILE_TOL > c { 1.0 } else { f64::INFINITY };

        for &i in members {
            let cand = match self.slot[i] {
                usize::MAX => rows[i].successor(c),
                s => self.affected_successor(&self.affected[s], rows, v, c),
            };
            if let Some(g) = cand {
                best = best.min(g);
            }
        }
        if let Some(g) = self.test_successor(v, c) {
            best = best.min(g);
        }
        // Overshoot past 1 is rounding.
        best.min(1.0)
    }

    /// Smallest cumulative value above `c + tol` of an affected row with the
    /// test atom at `v`.
    fn affected_successor(&self, a: &Affected, rows: &[RowCum], v: f64, c: f64) -> Option<f64> {
        let locs = &rows[a.row].locs;
        let value = |r: f64| {
            let base = self.affected_at_most(a, rows, r);
            if r >= v {
                base + a.test_mass
            } else {
                base
            }
        };
        let hit = |j: usize| value(locs[j]) - QUANTILE_TOL > c;
        // value(r) never exceeds the row's own mass plus the test slot, so no
        // location before `lo` can qualify. Gallop from there.
        let cum = &rows[a.row].cum;
        let mut lo = cum.partition_point(|&g| !(g + a.test_mass - QUANTILE_TOL > c));
        let mut step = 1;
        let mut hi = lo;
        while hi < locs.len() && !hit(hi) {
            lo = hi + 1;
            hi += step;
            step *= 2;
        }
        // First hit lies in [lo, hi]; `hi` is either a hit or the end.
        let mut hi = hi.min(locs.len());
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if hit(mid) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let j = lo;
        let at_locs = locs.get(j).map(|&r| value(r));
        let at_v = self.affected_at_most(a, rows, v) + a.test_mass;
        let at_v = (at_v - QUANTILE_TOL > c).then_some(at_v);
        min_opt(at_locs, at_v)
    }

    fn test_successor(&self, v: f64, c: f64) -> Option<f64> {
        let row = &self.test_row;
        let value = |j: usize| {
            let base = row.cum[j];
            if row.locs[j] >= v {
                base + self.test_mass
            } else {
                base
            }
        };
        let j = (0..row.locs.len()).find(|&j| value(j) - QUANTILE_TOL > c);
        let at_locs = j.map(value);
        let at_v = row.at_most(v) + self.test_mass;
        let at_v = (at_v - QUANTILE_TOL > c).then_some(at_v);
        min_opt(at_locs, at_v)
    }
}

fn min_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}
