//! Data preparation, calibration and prediction shared by the commands.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base::{Dataset, Interval, MiscoverageLevel};
use crate::bench::{default_feature_names, evaluate, split_dataset, Annotations, EvalReport, Generator, Split, Table};
use crate::calibration::{predict_threshold, split_threshold, Calibrated, LcpModel, TcMode, TcModel};
use crate::error::{Error, Result};
use crate::graph::{
    build_graph, connected_components, louvain, ClusterAssignment, GroupwiseModel, RegionId, SplitGroups,
};
use crate::scores::{BasePredictor, PointPrediction, ScoreKind};
use crate::seed;

use super::config::{ClusterMethod, DataSource, ExternalColumns, Method, RunConfig};

/// Per-stage seeds derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    pub data: u64,
    pub split: u64,
    pub base: u64,
    pub localizer: u64,
    pub clustering: u64,
    pub oracle: u64,
}

impl Streams {
    pub fn new(master: u64) -> Self {
        Self {
            data: seed::derive(master, "data"),
            split: seed::derive(master, "split"),
            base: seed::derive(master, "base"),
            localizer: seed::derive(master, "localizer"),
            clustering: seed::derive(master, "clustering"),
            oracle: seed::derive(master, "oracle"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseModel {
    Forest(BasePredictor),
    External(ExternalColumns),
}

impl BaseModel {
    /// Predictions for the rows of `table`, whose features are `x`.
    pub fn predict_rows(&self, x: &Dataset, table: Option<&Table>) -> Result<Vec<PointPrediction>> {
        match self {
            BaseModel::Forest(p) => (0..x.n_rows()).into_par_iter().map(|i| p.predict(x.row(i))).collect(),
            BaseModel::External(cols) => {
                let t = table.ok_or_else(|| Error::Data("external predictions need a csv source".into()))?;
                external_predictions(t, cols)
            }
        }
    }
}

fn external_predictions(t: &Table, cols: &ExternalColumns) -> Result<Vec<PointPrediction>> {
    Ok(match cols {
        ExternalColumns::Mean { mean } => t.column(mean)?.into_iter().map(PointPrediction::Mean).collect(),
        ExternalColumns::Band { lo, hi } => {
            t.column(lo)?.into_iter().zip(t.column(hi)?).map(|(lo, hi)| PointPrediction::Band { lo, hi }).collect()
        }
    })
}

/// Split data with base predictions on the calibration and test parts.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub generator: Option<Generator>,
    pub split: Split,
    pub base: BaseModel,
    pub calib_pred: Vec<PointPrediction>,
    pub test_pred: Vec<PointPrediction>,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let streams = Streams::new(cfg.seed);
    let spec = crate::bench::SplitSpec { seed: streams.split, ..cfg.split };
    let (data, names, target, generator, table, external) = match &cfg.data {
        DataSource::Generator { generator, n } => {
            let data = generator.sample(*n, streams.data)?;
            let names = default_feature_names(data.n_features());
            (data, names, "y".to_owned(), Some(*generator), None, None)
        }
        DataSource::Csv { csv, target, external } => {
            let table = Table::read(csv)?;
            let skip = external.as_ref().map(ExternalColumns::names).unwrap_or_default();
            let names = table.feature_names(target, &skip)?;
            let data = Dataset::new(table.matrix(&names)?, names.len(), table.column(target)?)?;
            (data, names, target.clone(), None, Some(table), external.clone())
        }
    };
    let split = split_dataset(&data, &spec)?;
    log::info!(
        "split {} rows into {}/{}/{}",
        data.n_rows(),
        split.train.n_rows(),
        split.calib.n_rows(),
        split.test.n_rows()
    );
    let (base, calib_pred, test_pred) = match external {
        Some(cols) => {
            let all = external_predictions(table.as_ref().expect("csv source"), &cols)?;
            let pick = |idx: &[usize]| idx.iter().map(|&i| all[i]).collect::<Vec<_>>();
            (BaseModel::External(cols), pick(&split.indices[1]), pick(&split.indices[2]))
        }
        None => {
            let params = cfg.base.clone().with_seed(streams.base);
            let model = BaseModel::Forest(BasePredictor::fit(cfg.score, &split.train, &params)?);
            log::info!("fitted base forest with {} trees", params.n_trees);
            let c = model.predict_rows(&split.calib, None)?;
            let t = model.predict_rows(&split.test, None)?;
            (model, c, t)
        }
    };
    Ok(Prepared { feature_names: names, target_name: target, generator, split, base, calib_pred, test_pred })
}

impl Prepared {
    /// Scores of the calibration part.
    pub fn calib_scores(&self) -> Result<Vec<f64>> {
        scores(&self.calib_pred, self.split.calib.targets())
    }

    pub fn test_scores(&self) -> Result<Vec<f64>> {
        scores(&self.test_pred, self.split.test.targets())
    }

    /// Oracle radii of the test points, when the data law is known and the
    /// score is the absolute residual.
    pub fn oracle_radii(&self, cfg: &RunConfig) -> Result<Option<Vec<f64>>> {
        let Some(g) = self.generator else { return Ok(None) };
        if cfg.oracle_draws == 0 || cfg.score != ScoreKind::MeanAbsolute {
            return Ok(None);
        }
        let alpha = MiscoverageLevel::new(cfg.alpha)?;
        let stream = Streams::new(cfg.seed).oracle;
        let test = &self.split.test;
        let radii = (0..test.n_rows())
            .into_par_iter()
            .map(|i| {
                let PointPrediction::Mean(mu) = self.test_pred[i] else { unreachable!("mean score") };
                g.oracle_radius(test.row(i), mu, alpha, cfg.oracle_draws, seed::child(stream, i as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(radii))
    }
}

fn scores(pred: &[PointPrediction], y: &[f64]) -> Result<Vec<f64>> {
    let s: Vec<f64> = pred.iter().zip(y).map(|(p, &y)| p.score(y)).collect();
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("base predictions give a non-finite score".into()));
    }
    Ok(s)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodState {
    Plain(Calibrated),
    Groupwise(GroupwiseModel),
    SplitGroups(SplitGroups),
}

/// Calibration summaries reported next to the metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_groups: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modularity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tc_warning: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

/// Output at one test point before inversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointOutput {
    pub threshold: f64,
    pub alpha_tilde: Option<f64>,
    pub region: Option<RegionId>,
}

impl MethodState {
    pub fn predict(&self, x: &[f64]) -> Result<PointOutput> {
        match self {
            MethodState::Plain(c) => {
                let r = predict_threshold(c, x)?;
                Ok(PointOutput { threshold: r.threshold, alpha_tilde: r.alpha_tilde, region: None })
            }
            MethodState::Groupwise(g) => {
                let t = g.threshold(x)?;
                Ok(PointOutput { threshold: t.threshold, alpha_tilde: t.alpha_tilde, region: Some(t.region) })
            }
            MethodState::SplitGroups(g) => {
                let t = g.threshold(x)?;
                Ok(PointOutput { threshold: t.threshold, alpha_tilde: None, region: Some(t.region) })
            }
        }
    }

    /// Checks a deserialized state for internal consistency.
    pub fn validate(&self, n_features: usize) -> Result<()> {
        let lcp = |m: &LcpModel| -> Result<()> {
            m.localizer().validate()?;
            if m.localizer().n_features() != n_features {
                return Err(Error::Format("localizer feature count differs from the model".into()));
            }
            Ok(())
        };
        let labels = |m: &LcpModel, c: &ClusterAssignment| -> Result<()> {
            lcp(m)?;
            if c.labels().len() != m.n_calibration() {
                return Err(Error::Format("cluster labels do not match the calibration set".into()));
            }
            Ok(())
        };
        match self {
            MethodState::Plain(Calibrated::Split { .. }) => Ok(()),
            MethodState::Plain(Calibrated::LcpRf(m)) => lcp(m),
            MethodState::Plain(Calibrated::Tc(t)) => lcp(t.inner()),
            MethodState::Groupwise(g) => labels(g.model(), g.clusters()),
            MethodState::SplitGroups(g) => labels(g.model(), g.clusters()),
        }
    }
}

/// Fits methods on one calibration set, sharing localizers and clusters.
pub struct Calibrator<'a> {
    cfg: &'a RunConfig,
    alpha: MiscoverageLevel,
    calib: &'a Dataset,
    scores: Vec<f64>,
    full: Option<LcpModel>,
    clusters: Option<(ClusterAssignment, Option<f64>)>,
    halves: Option<LcpModel>,
}

impl<'a> Calibrator<'a> {
    pub fn new(cfg: &'a RunConfig, prepared: &'a Prepared) -> Result<Self> {
        Ok(Self {
            cfg,
            alpha: MiscoverageLevel::new(cfg.alpha)?,
            calib: &prepared.split.calib,
            scores: prepared.calib_scores()?,
            full: None,
            clusters: None,
            halves: None,
        })
    }

    fn localizer_params(&self) -> crate::forest::ForestParams {
        self.cfg.localizer.clone().with_seed(Streams::new(self.cfg.seed).localizer)
    }

    fn full(&mut self) -> Result<LcpModel> {
        if self.full.is_none() {
            let m = LcpModel::fit(self.calib, &self.scores, &self.localizer_params(), self.alpha)?;
            log::info!("fitted localizer on {} calibration points", self.scores.len());
            self.full = Some(m);
        }
        Ok(self.full.clone().expect("just fitted"))
    }

    fn clusters(&mut self) -> Result<(ClusterAssignment, Option<f64>)> {
        if self.clusters.is_none() {
            let model = self.full()?;
            let cc = self.cfg.cluster_config();
            let mut g = build_graph(model.localizer());
            if let Some(p) = cc.prune {
                g = g.pruned(p)?;
            }
            let found = match cc.kind {
                ClusterMethod::Components => (connected_components(&g), None),
                ClusterMethod::Louvain => {
                    let r = louvain(&g, cc.resolution, Streams::new(self.cfg.seed).clustering)?;
                    (r.assignment, Some(r.modularity))
                }
            };
            log::info!("{} groups over {} edges", found.0.n_groups(), g.edges().len());
            self.clusters = Some(found);
        }
        Ok(self.clusters.clone().expect("just built"))
    }

    /// The localizer fitted on the first half of the calibration set, and
    /// the second half for the grid search.
    fn halves(&mut self) -> Result<(LcpModel, Dataset, Vec<f64>)> {
        let n = self.scores.len();
        if n < 2 {
            return Err(Error::Data("the training-conditional methods need two calibration points".into()));
        }
        let h = n / 2;
        let first: Vec<usize> = (0..h).collect();
        let second: Vec<usize> = (h..n).collect();
        if self.halves.is_none() {
            let d1 = self.calib.select(&first)?;
            self.halves = Some(LcpModel::fit(&d1, &self.scores[..h], &self.localizer_params(), self.alpha)?);
        }
        let d2 = self.calib.select(&second)?;
        Ok((self.halves.clone().expect("just fitted"), d2, self.scores[h..].to_vec()))
    }

    pub fn fit(&mut self, method: Method) -> Result<(MethodState, FitInfo)> {
        let tol = self.cfg.cluster_config().tie_tol;
        let mut info = FitInfo::default();
        let state = match method {
            Method::Split => {
                MethodState::Plain(Calibrated::Split { threshold: split_threshold(&self.scores, self.alpha)? })
            }
            Method::LcpRf => MethodState::Plain(Calibrated::LcpRf(self.full()?)),
            Method::LcpRfG | Method::SplitG => {
                let model = self.full()?;
                let (clusters, q) = self.clusters()?;
                info.n_groups = Some(clusters.n_groups());
                info.modularity = q;
                if method == Method::LcpRfG {
                    MethodState::Groupwise(GroupwiseModel::new(model, clusters, tol)?)
                } else {
                    MethodState::SplitGroups(SplitGroups::new(model, clusters, tol)?)
                }
            }
            Method::QrfTc | Method::LcpRfTc => {
                let mode = if method == Method::QrfTc { TcMode::Qrf } else { TcMode::Lcp };
                let (inner, d2, s2) = self.halves()?;
                let tc = TcModel::calibrate(inner, &d2, &s2, mode, self.cfg.tc)?;
                info.alpha_hat = Some(tc.alpha_hat());
                info.tc_warning = Some(tc.warning());
                info.delta = tc.delta();
                MethodState::Plain(Calibrated::Tc(tc))
            }
        };
        Ok((state, info))
    }
}

/// Thresholds and intervals for every row of `x`.
pub fn predict_all(state: &MethodState, x: &Dataset, base: &[PointPrediction]) -> Result<Vec<(Interval, PointOutput)>> {
    if base.len() != x.n_rows() {
        return Err(Error::shape("base predictions do not match the rows"));
    }
    (0..x.n_rows())
        .into_par_iter()
        .map(|i| {
            let out = state.predict(x.row(i))?;
            Ok((base[i].invert(out.threshold), out))
        })
        .collect()
}

/// One method evaluated on the test part.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    pub state: MethodState,
    pub info: FitInfo,
    pub report: EvalReport,
}

pub fn annotations(points: &[(Interval, PointOutput)]) -> Annotations {
    Annotations {
        alpha_tilde: points.iter().map(|p| p.1.alpha_tilde).collect(),
        region: points.iter().map(|p| p.1.region.map(|r| r.to_string())).collect(),
    }
}

/// Calibrates `method` and evaluates it on the test part.
pub fn run_method(
    calibrator: &mut Calibrator<'_>,
    prepared: &Prepared,
    oracle: Option<&[f64]>,
    method: Method,
) -> Result<MethodRun> {
    let (state, info) = calibrator.fit(method)?;
    let points = predict_all(&state, &prepared.split.test, &prepared.test_pred)?;
    let intervals: Vec<Interval> = points.iter().map(|p| p.0).collect();
    let report =
        evaluate(&intervals, prepared.split.test.targets(), &prepared.test_scores()?, oracle, &annotations(&points))?;
    log::info!("{method}: coverage {:.4}, {} infinite intervals", report.coverage, report.n_infinite);
    Ok(MethodRun { method, state, info, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(method: &str) -> RunConfig {
        RunConfig::from_json(&format!(
            r#"{{"data": {{"generator": "blocks", "n": 300}}, "method": "{method}", "alpha": 0.1,
                 "base": {{"n_trees": 10}}, "localizer": {{"n_trees": 10}}, "oracle_draws": 10000, "seed": 3,
                 "clustering": {{"kind": "components"}}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn streams_are_distinct() {
        let s = Streams::new(1);
        let all = [s.data, s.split, s.base, s.localizer, s.clustering, s.oracle];
        let mut u = all.to_vec();
        u.sort_unstable();
        u.dedup();
        assert_eq!(u.len(), all.len());
    }

    #[test]
    fn every_method_runs_on_blocks() {
        let cfg = config("split");
        let p = prepare(&cfg).unwrap();
        assert_eq!((p.split.train.n_rows(), p.split.calib.n_rows(), p.split.test.n_rows()), (120, 120, 60));
        let oracle = p.oracle_radii(&cfg).unwrap().unwrap();
        let mut cal = Calibrator::new(&cfg, &p).unwrap();
        for m in Method::ALL {
            let r = run_method(&mut cal, &p, Some(&oracle), m).unwrap();
            assert_eq!(r.report.n_test, 60);
            assert!((0.0..=1.0).contains(&r.report.coverage));
            r.state.validate(2).unwrap();
        }
    }

    #[test]
    fn preparation_is_deterministic() {
        let cfg = config("lcp-rf");
        let (a, b) = (prepare(&cfg).unwrap(), prepare(&cfg).unwrap());
        assert_eq!(a.split, b.split);
        assert_eq!(a.test_pred, b.test_pred);
    }
}
