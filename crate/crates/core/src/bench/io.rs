//! CSV ingestion and train / calibration / test splitting.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::base::Dataset;
use crate::error::{Error, Result};
use crate::seed;

/// A numeric CSV table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file =
            std::fs::File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
        Self::from_reader(file)
    }

    /// Every cell must parse as a finite number; the first offending row is
    /// reported by its 1-based position after the header.
    pub fn from_reader<R: std::io::Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| Error::Data(format!("unreadable header: {e}")))?
            .iter()
            .map(str::to_owned)
            .collect();
        if headers.is_empty() || headers.iter().all(String::is_empty) {
            return Err(Error::Data("missing header row".into()));
        }
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let row = i + 1;
            let record = record.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
            let values = record
                .iter()
                .zip(&headers)
                .map(|(cell, name)| match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(Error::Data(format!("row {row}, column {name:?}: non-numeric or missing value {cell:?}"))),
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(values);
        }
        if rows.is_empty() {
            return Err(Error::Data("no data rows".into()));
        }
        Ok(Self { headers, rows })
    }

    pub fn headers(&self) -> &[String] {
        &self.headers
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    fn position(&self, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| Error::Data(format!("column {name:?} not found")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.position(name)?;
        Ok(self.rows.iter().map(|r| r[j]).collect())
    }

    /// Every column except `target` and `exclude`, in file order.
    pub fn feature_names(&self, target: &str, exclude: &[String]) -> Result<Vec<String>> {
        self.position(target)?;
        for c in exclude {
            self.position(c)?;
        }
        let names: Vec<String> =
            self.headers.iter().filter(|h| *h != target && !exclude.contains(h)).cloned().collect();
        if names.is_empty() {
            return Err(Error::Data("no feature columns".into()));
        }
        Ok(names)
    }

    /// Row-major values of the named columns.
    pub fn matrix(&self, names: &[String]) -> Result<Vec<f64>> {
        let idx: Vec<usize> = names.iter().map(|c| self.position(c)).collect::<Result<_>>()?;
        Ok(self.rows.iter().flat_map(|r| idx.iter().map(move |&j| r[j])).collect())
    }

    pub fn to_dataset(&self, target: &str, exclude: &[String]) -> Result<Dataset> {
        let names = self.feature_names(target, exclude)?;
        Dataset::new(self.matrix(&names)?, names.len(), self.column(target)?)
    }
}

/// Reads `path`; every column but `target` becomes a feature.
pub fn load_csv(path: impl AsRef<Path>, target: &str) -> Result<Dataset> {
    Table::read(path)?.to_dataset(target, &[])
}

/// `x0..x{d-1}`, the column names given to generated data.
pub fn default_feature_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}

/// Writes a dataset as CSV with the given feature names and `target_name`.
pub fn write_csv<W: std::io::Write>(data: &Dataset, names: &[String], target_name: &str, out: W) -> Result<()> {
    if names.len() != data.n_features() {
        return Err(Error::shape("one name per feature is required"));
    }
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut header = names.to_vec();
    header.push(target_name.to_owned());
    w.write_record(&header).map_err(io)?;
    for (x, y) in data.rows().zip(data.targets()) {
        let rec: Vec<String> = x.iter().chain(std::iter::once(y)).map(|v| format!("{v:?}")).collect();
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Fractions of the shuffled rows going to training, calibration and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub calib: f64,
    pub test: f64,
    /// Set by the caller; a run derives it from its master seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train: 0.4, calib: 0.4, test: 0.2, seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.calib, self.test];
        if f.iter().any(|v| !(*v > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions {f:?} must be positive and sum to 1")));
        }
        Ok(())
    }

    /// Sizes `floor(f n)` for training and calibration; the rest is test.
    pub fn sizes(&self, n: usize) -> Result<[usize; 3]> {
        self.validate()?;
        let take = |f: f64| (f * n as f64 + 1e-9).floor() as usize;
        let (a, b) = (take(self.train), take(self.calib));
        if a == 0 || b == 0 || a + b >= n {
            return Err(Error::Data(format!("{n} rows cannot fill three non-empty splits")));
        }
        Ok([a, b, n - a - b])
    }

    /// Row indices of each part after a seeded shuffle.
    pub fn indices(&self, n: usize) -> Result<[Vec<usize>; 3]> {
        let [a, b, _] = self.sizes(n)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::rng(self.seed));
        let test = order.split_off(a + b);
        let calib = order.split_off(a);
        Ok([order, calib, test])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub calib: Dataset,
    pub test: Dataset,
    /// Source rows of each part.
    pub indices: [Vec<usize>; 3],
}

pub fn split_dataset(data: &Dataset, spec: &SplitSpec) -> Result<Split> {
    let indices = spec.indices(data.n_rows())?;
    Ok(Split {
        train: data.select(&indices[0])?,
        calib: data.select(&indices[1])?,
        test: data.select(&indices[2])?,
        indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_a_small_table() {
        let t = Table::from_reader("a,b,y\n1,2,3\n4,5,6\n7,8,9\n".as_bytes()).unwrap();
        let d = t.to_dataset("y", &[]).unwrap();
        assert_eq!((d.n_rows(), d.n_features()), (3, 2));
        assert_eq!(d.targets(), &[3.0, 6.0, 9.0]);
        assert_eq!(d.row(1), &[4.0, 5.0]);
        let d = t.to_dataset("a", &["b".into()]).unwrap();
        assert_eq!(d.n_features(), 1);
        assert_eq!(t.column("b").unwrap(), vec![2.0, 5.0, 8.0]);
    }

    #[test]
    fn reports_bad_cells_and_columns() {
        let t = Table::from_reader("a,y\n1,2\n".as_bytes()).unwrap();
        let e = t.to_dataset("z", &[]).unwrap_err().to_string();
        assert!(e.contains("\"z\""), "{e}");
        let e = Table::from_reader("a,y\n1,2\n3,NaN\n".as_bytes()).unwrap_err().to_string();
        assert!(e.contains("row 2"), "{e}");
        let e = Table::from_reader("a,y\n1,\n".as_bytes()).unwrap_err().to_string();
        assert!(e.contains("row 1"), "{e}");
        assert!(Table::from_reader("a,y\n1,2,3\n".as_bytes()).is_err());
        assert!(Table::from_reader("a,y\n".as_bytes()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let d = Dataset::new(vec![0.1, 0.2, 0.3, 0.4], 2, vec![1.0 / 3.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_csv(&d, &default_feature_names(2), "y", &mut buf).unwrap();
        let back = Table::from_reader(buf.as_slice()).unwrap().to_dataset("y", &[]).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn split_sizes() {
        let s = SplitSpec::default();
        assert_eq!(s.sizes(10).unwrap(), [4, 4, 2]);
        assert_eq!(s.sizes(5).unwrap(), [2, 2, 1]);
        assert!(s.sizes(2).is_err());
        assert!(SplitSpec { train: 0.5, ..s }.validate().is_err());
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let d = Dataset::new((0..50).map(|i| i as f64).collect(), 1, vec![0.0; 50]).unwrap();
        let s = SplitSpec { seed: 4, ..Default::default() };
        let a = split_dataset(&d, &s).unwrap();
        assert_eq!(a, split_dataset(&d, &s).unwrap());
        let mut all: Vec<usize> = a.indices.concat();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(a.train.row(0)[0], a.indices[0][0] as f64);
    }
}
