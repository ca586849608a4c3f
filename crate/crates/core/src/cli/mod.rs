//! Command-line front end: `run`, `fit`, `predict` and `compare`.
//!
//! Exit codes: 0 success, 2 configuration errors, 3 data and model-file
//! errors, 4 numerical failures.

pub mod config;
pub mod pipeline;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::base::Dataset;
use crate::bench::{median, write_csv, EvalReport, Table};
use crate::error::{Error, Result};
use crate::scores::ScoreKind;

pub use config::{ClusterConfig, ClusterMethod, DataSource, ExternalColumns, Method, RunConfig};
pub use pipeline::{prepare, run_method, BaseModel, Calibrator, FitInfo, MethodState, Prepared, Streams};

pub const MODEL_FORMAT: &str = "lcprf-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "lcprf", version, about = "Localized conformal prediction with random forests")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration (JSON).
    #[arg(value_name = "CONFIG", required_unless_present = "config_flag")]
    pub config: Option<PathBuf>,
    #[arg(long = "config", value_name = "PATH", conflicts_with = "config")]
    pub config_flag: Option<PathBuf>,
    /// Overrides the master seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the output directory of the config.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let path = self.config.as_ref().or(self.config_flag.as_ref()).expect("clap requires a config");
        let mut cfg = RunConfig::load(path)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit, calibrate and evaluate one method.
    Run(ConfigArgs),
    /// Fit and calibrate one method and save the model.
    Fit(ConfigArgs),
    /// Intervals for the rows of a CSV file from a saved model.
    Predict {
        #[arg(value_name = "MODEL", required_unless_present = "model_flag")]
        model: Option<PathBuf>,
        #[arg(value_name = "DATA", required_unless_present = "data_flag")]
        data: Option<PathBuf>,
        #[arg(value_name = "OUT", required_unless_present = "out_flag")]
        out: Option<PathBuf>,
        #[arg(long = "model", value_name = "PATH", conflicts_with = "model")]
        model_flag: Option<PathBuf>,
        #[arg(long = "data", value_name = "PATH", conflicts_with = "data")]
        data_flag: Option<PathBuf>,
        #[arg(long = "out", value_name = "PATH", conflicts_with = "out")]
        out_flag: Option<PathBuf>,
    },
    /// Run several methods on the same splits and tabulate them.
    Compare(ConfigArgs),
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Format(_) | Error::Shape(_) | Error::Io(_) => 3,
        Error::Domain(_) | Error::Fit(_) | Error::Numeric(_) => 4,
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run(a) => a.load().and_then(|c| cmd_run(&c)),
        Command::Fit(a) => a.load().and_then(|c| cmd_fit(&c)),
        Command::Compare(a) => a.load().and_then(|c| cmd_compare(&c)),
        Command::Predict { model, data, out, model_flag, data_flag, out_flag } => {
            let pick = |a: Option<PathBuf>, b: Option<PathBuf>| a.or(b).expect("clap requires the path");
            cmd_predict(&pick(model, model_flag), &pick(data, data_flag), &pick(out, out_flag))
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Scalar summary written as `report.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub alpha: f64,
    pub seed: u64,
    pub n_train: usize,
    pub n_calib: usize,
    pub median_err: Option<f64>,
    pub median_errhat: Option<f64>,
    #[serde(flatten)]
    pub info: FitInfo,
    #[serde(flatten)]
    pub eval: EvalReport,
}

impl RunReport {
    fn new(cfg: &RunConfig, prepared: &Prepared, run: &pipeline::MethodRun) -> Self {
        Self {
            method: run.method,
            alpha: cfg.alpha,
            seed: cfg.seed,
            n_train: prepared.split.train.n_rows(),
            n_calib: prepared.split.calib.n_rows(),
            median_err: median(&run.report.err),
            median_errhat: median(&run.report.errhat),
            info: run.info.clone(),
            eval: run.report.clone(),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.into()))?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}

fn write_test_split(dir: &Path, p: &Prepared) -> Result<()> {
    write_csv(&p.split.test, &p.feature_names, &p.target_name, create(&dir.join("test_split.csv"))?)
}

fn output_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.output)?;
    Ok(&cfg.output)
}

/// `report.json`, `points.csv` and `test_split.csv` for one method.
pub fn cmd_run(cfg: &RunConfig) -> Result<()> {
    let method = cfg.single_method()?;
    let prepared = prepare(cfg)?;
    let oracle = prepared.oracle_radii(cfg)?;
    let mut cal = Calibrator::new(cfg, &prepared)?;
    let run = run_method(&mut cal, &prepared, oracle.as_deref(), method)?;
    let dir = output_dir(cfg)?;
    write_json(&dir.join("report.json"), &RunReport::new(cfg, &prepared, &run))?;
    run.report.write_rows(create(&dir.join("points.csv"))?)?;
    write_test_split(dir, &prepared)
}

/// `compare.csv` plus a report and point file per method.
pub fn cmd_compare(cfg: &RunConfig) -> Result<()> {
    let methods = cfg.method_list()?;
    let prepared = prepare(cfg)?;
    let oracle = prepared.oracle_radii(cfg)?;
    let mut cal = Calibrator::new(cfg, &prepared)?;
    let dir = output_dir(cfg)?;
    let mut table = csv::Writer::from_writer(create(&dir.join("compare.csv"))?);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    table
        .write_record(["method", "coverage", "mean_length", "median_length", "median_err", "median_errhat"])
        .map_err(io)?;
    let opt = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
    for m in methods {
        let run = run_method(&mut cal, &prepared, oracle.as_deref(), m)?;
        let rep = RunReport::new(cfg, &prepared, &run);
        write_json(&dir.join(format!("report_{m}.json")), &rep)?;
        run.report.write_rows(create(&dir.join(format!("points_{m}.csv")))?)?;
        table
            .write_record([
                m.to_string(),
                format!("{:?}", rep.eval.coverage),
                opt(rep.eval.mean_length),
                opt(rep.eval.median_length),
                opt(rep.median_err),
                opt(rep.median_errhat),
            ])
            .map_err(io)?;
    }
    table.flush()?;
    write_test_split(dir, &prepared)
}

/// Everything `predict` needs, persisted by `fit`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub method: Method,
    pub alpha: f64,
    pub score: ScoreKind,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub base: BaseModel,
    pub state: MethodState,
    pub info: FitInfo,
}

impl ModelFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Format(format!("cannot read model {}: {e}", path.display())))?;
        let head: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("model file is not valid JSON: {e}")))?;
        match (head.get("format").and_then(|v| v.as_str()), head.get("version").and_then(|v| v.as_u64())) {
            (Some(MODEL_FORMAT), Some(v)) if v == u64::from(MODEL_VERSION) => {}
            (Some(MODEL_FORMAT), v) => {
                return Err(Error::Format(format!("model version {v:?} is not supported (expected {MODEL_VERSION})")))
            }
            _ => return Err(Error::Format(format!("not an {MODEL_FORMAT} file"))),
        }
        let model: ModelFile =
            serde_json::from_value(head).map_err(|e| Error::Format(format!("malformed model file: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let d = self.feature_names.len();
        if let BaseModel::Forest(p) = &self.base {
            p.forest().validate().map_err(|e| Error::Format(e.to_string()))?;
            if p.forest().n_features() != d {
                return Err(Error::Format("base forest feature count differs from the model".into()));
            }
        }
        self.state.validate(d).map_err(|e| match e {
            Error::Format(_) => e,
            other => Error::Format(other.to_string()),
        })
    }
}

/// Saves `model.json` and `test_split.csv` in the output directory.
pub fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    let method = cfg.single_method()?;
    let prepared = prepare(cfg)?;
    let mut cal = Calibrator::new(cfg, &prepared)?;
    let (state, info) = cal.fit(method)?;
    let model = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        method,
        alpha: cfg.alpha,
        score: cfg.score,
        feature_names: prepared.feature_names.clone(),
        target_name: prepared.target_name.clone(),
        base: prepared.base.clone(),
        state,
        info,
    };
    let dir = output_dir(cfg)?;
    let mut w = create(&dir.join("model.json"))?;
    serde_json::to_writer(&mut w, &model).map_err(|e| Error::Io(e.into()))?;
    std::io::Write::flush(&mut w)?;
    write_test_split(dir, &prepared)
}

/// Writes `index,lower,upper,radius,alpha_tilde,region` per input row.
pub fn cmd_predict(model_path: &Path, data_path: &Path, out_path: &Path) -> Result<()> {
    let model = ModelFile::read(model_path)?;
    let table = Table::read(data_path)?;
    let d = model.feature_names.len();
    let x = Dataset::new(table.matrix(&model.feature_names)?, d, vec![0.0; table.n_rows()])?;
    let base = model.base.predict_rows(&x, Some(&table))?;
    let points = pipeline::predict_all(&model.state, &x, &base)?;
    let mut w = csv::Writer::from_writer(create(out_path)?);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["index", "lower", "upper", "radius", "alpha_tilde", "region"]).map_err(io)?;
    for (i, (iv, out)) in points.iter().enumerate() {
        w.write_record([
            i.to_string(),
            format!("{:?}", iv.lower),
            format!("{:?}", iv.upper),
            format!("{:?}", iv.radius),
            out.alpha_tilde.map(|a| format!("{a:?}")).unwrap_or_default(),
            out.region.map(|r| r.to_string()).unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    log::info!("wrote {} intervals to {}", points.len(), out_path.display());
    Ok(())
}
