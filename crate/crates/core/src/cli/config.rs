//! JSON run configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bench::{Generator, SplitSpec};
use crate::calibration::TcConfig;
use crate::error::{Error, Result};
use crate::forest::ForestParams;
use crate::scores::ScoreKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "split")]
    Split,
    #[serde(rename = "lcp-rf")]
    LcpRf,
    #[serde(rename = "lcp-rf-g")]
    LcpRfG,
    #[serde(rename = "qrf-tc")]
    QrfTc,
    #[serde(rename = "split-g")]
    SplitG,
    #[serde(rename = "lcp-rf-tc")]
    LcpRfTc,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::Split, Method::LcpRf, Method::LcpRfG, Method::QrfTc, Method::SplitG, Method::LcpRfTc];

    pub fn name(self) -> &'static str {
        match self {
            Method::Split => "split",
            Method::LcpRf => "lcp-rf",
            Method::LcpRfG => "lcp-rf-g",
            Method::QrfTc => "qrf-tc",
            Method::SplitG => "split-g",
            Method::LcpRfTc => "lcp-rf-tc",
        }
    }

    pub fn needs_clustering(self) -> bool {
        matches!(self, Method::LcpRfG | Method::SplitG)
    }

    pub fn is_tc(self) -> bool {
        matches!(self, Method::QrfTc | Method::LcpRfTc)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("method: unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum DataSource {
    Generator {
        generator: Generator,
        n: usize,
    },
    Csv {
        csv: PathBuf,
        target: String,
        /// Columns with externally fitted base predictions.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        external: Option<ExternalColumns>,
    },
}

/// Base predictions read from the data instead of a fitted forest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum ExternalColumns {
    Mean { mean: String },
    Band { lo: String, hi: String },
}

impl ExternalColumns {
    pub fn names(&self) -> Vec<String> {
        match self {
            ExternalColumns::Mean { mean } => vec![mean.clone()],
            ExternalColumns::Band { lo, hi } => vec![lo.clone(), hi.clone()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    Components,
    Louvain,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    pub kind: ClusterMethod,
    /// Louvain resolution.
    #[serde(default = "one")]
    pub resolution: f64,
    /// Edges lighter than this are dropped before clustering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prune: Option<f64>,
    #[serde(default = "default_tie_tol")]
    pub tie_tol: f64,
}

fn default_tie_tol() -> f64 {
    crate::graph::DEFAULT_TIE_TOL
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { kind: ClusterMethod::Components, resolution: 1.0, prune: None, tie_tol: default_tie_tol() }
    }
}

fn default_score() -> ScoreKind {
    ScoreKind::MeanAbsolute
}

fn default_oracle_draws() -> usize {
    100_000
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    #[serde(default = "default_score")]
    pub score: ScoreKind,
    #[serde(default)]
    pub base: ForestParams,
    #[serde(default)]
    pub localizer: ForestParams,
    /// Method of `run` and `fit`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    /// Methods of `compare`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub methods: Vec<Method>,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clustering: Option<ClusterConfig>,
    #[serde(default)]
    pub tc: TcConfig,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub seed: u64,
    /// Monte-Carlo draws per test point for the oracle radius; 0 disables it.
    #[serde(default = "default_oracle_draws")]
    pub oracle_draws: usize,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; a relative csv path is taken relative to the file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let DataSource::Csv { csv, .. } = &mut cfg.data {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha", format!("{} is not in (0, 1)", self.alpha));
        }
        if let DataSource::Generator { n, .. } = self.data {
            if n == 0 {
                return bad("data.n", "must be positive".into());
            }
        }
        if let Err(e) = self.score.validate() {
            return bad("score", e.to_string());
        }
        if let Err(e) = self.split.validate() {
            return bad("split", e.to_string());
        }
        if self.tc.grid_size == 0 {
            return bad("tc.grid_size", "must be at least 1".into());
        }
        if !(self.tc.epsilon > 0.0 && self.tc.epsilon.is_finite()) {
            return bad("tc.epsilon", "must be positive".into());
        }
        if self.oracle_draws != 0 && self.oracle_draws < crate::bench::MIN_ORACLE_DRAWS {
            return bad("oracle_draws", format!("use 0 or at least {}", crate::bench::MIN_ORACLE_DRAWS));
        }
        for (field, p) in [("base", &self.base), ("localizer", &self.localizer)] {
            if p.n_trees == 0 {
                return bad(&format!("{field}.n_trees"), "must be at least 1".into());
            }
        }
        if let DataSource::Csv { external: Some(ext), .. } = &self.data {
            let fits = matches!(
                (ext, self.score),
                (ExternalColumns::Mean { .. }, ScoreKind::MeanAbsolute)
                    | (ExternalColumns::Band { .. }, ScoreKind::QuantilePair { .. })
            );
            if !fits {
                return bad("data.external", "columns do not match the score kind".into());
            }
        }
        if let Some(m) = self.method.iter().chain(&self.methods).find(|m| m.needs_clustering()) {
            if self.clustering.is_none() {
                return bad("clustering", format!("required by {m}"));
            }
        }
        if let Some(c) = &self.clustering {
            if !(c.resolution > 0.0 && c.resolution.is_finite()) {
                return bad("clustering.resolution", "must be positive".into());
            }
            if c.prune.is_some_and(|p| !(p >= 0.0 && p.is_finite())) {
                return bad("clustering.prune", "must be a nonnegative number".into());
            }
            if !(c.tie_tol >= 0.0) {
                return bad("clustering.tie_tol", "must be nonnegative".into());
            }
        }
        Ok(())
    }

    /// The single method of `run` and `fit`.
    pub fn single_method(&self) -> Result<Method> {
        match (self.method, self.methods.as_slice()) {
            (Some(m), _) => Ok(m),
            (None, [m]) => Ok(*m),
            _ => Err(Error::Config("method: missing".into())),
        }
    }

    /// The methods of `compare`; falls back to `method`.
    pub fn method_list(&self) -> Result<Vec<Method>> {
        if !self.methods.is_empty() {
            let mut seen = std::collections::HashSet::new();
            if let Some(m) = self.methods.iter().find(|m| !seen.insert(**m)) {
                return Err(Error::Config(format!("methods: {m} listed twice")));
            }
            return Ok(self.methods.clone());
        }
        self.method.map(|m| vec![m]).ok_or_else(|| Error::Config("methods: missing".into()))
    }

    /// Clustering settings, defaulting to connected components.
    pub fn cluster_config(&self) -> ClusterConfig {
        self.clustering.unwrap_or_default()
    }
}
