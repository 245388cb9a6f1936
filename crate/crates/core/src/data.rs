//! Tabular binary-classification data: CSV ingestion, min-max scaling,
//! the two-halves / train-test protocol splits and synthetic generators.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub const LABEL_COLUMN: &str = "label";

/// Feature rows with binary labels. Features are expected to be min-max
/// scaled into `[0, 1]` before they reach the explanation machinery; see
/// [`Dataset::ensure_unit_range`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    rows: Vec<Vec<f64>>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, rows: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::InvalidConfig(format!("{} rows but {} labels", rows.len(), labels.len())));
        }
        let d = feature_names.len();
        for (i, row) in rows.iter().enumerate() {
            check_dim(d, row.len())?;
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Parse { row: i + 1, column: feature_names[c].clone(), message: "non-finite value".into() });
            }
        }
        if let Some(i) = labels.iter().position(|&y| y > 1) {
            return Err(Error::Parse { row: i + 1, column: LABEL_COLUMN.into(), message: "label must be 0 or 1".into() });
        }
        Ok(Dataset { feature_names, rows, labels })
    }

    /// Dataset with generated feature names `x0, x1, ...`.
    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        Self::new((0..d).map(|i| format!("x{i}")).collect(), rows, labels)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], u8)> {
        self.rows.iter().map(Vec::as_slice).zip(self.labels.iter().copied())
    }

    pub fn count_label(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&y| y == label).count()
    }

    pub fn ensure_unit_range(&self) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            if let Some(c) = row.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Parse {
                    row: i + 1,
                    column: self.feature_names[c].clone(),
                    message: format!("value {} outside [0, 1]; scale features first", row[c]),
                });
            }
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        check_dim(self.dim(), other.dim())?;
        let mut out = self.clone();
        out.rows.extend(other.rows.iter().cloned());
        out.labels.extend(other.labels.iter().copied());
        Ok(out)
    }

    /// Shuffles with `seed` and splits into two halves (the first half gets the
    /// extra row when the length is odd).
    pub fn split_halves(&self, seed: u64) -> (Dataset, Dataset) {
        let idx = permutation(self.len(), seed);
        let mid = self.len().div_ceil(2);
        (self.subset(&idx[..mid]), self.subset(&idx[mid..]))
    }

    /// Shuffles with `seed` and returns `(train, test)` with
    /// `round(len * train_fraction)` training rows.
    pub fn train_test_split(&self, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(train_fraction > 0.0 && train_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!("train fraction {train_fraction} not in (0, 1]")));
        }
        let idx = permutation(self.len(), seed);
        let cut = ((self.len() as f64) * train_fraction).round() as usize;
        Ok((self.subset(&idx[..cut]), self.subset(&idx[cut..])))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let text = fs::read_to_string(path)?;
        Self::parse_csv(&text)
    }

    /// Parses a CSV with a header row and a `label` column. Values are taken
    /// as-is; use [`MinMaxScaler`] for raw data.
    pub fn parse_csv(text: &str) -> Result<Dataset> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        let label_col = header.iter().position(|h| h == LABEL_COLUMN).ok_or_else(|| Error::Parse {
            row: 0,
            column: LABEL_COLUMN.into(),
            message: "missing label column".into(),
        })?;
        let feature_names: Vec<String> =
            header.iter().enumerate().filter(|&(i, _)| i != label_col).map(|(_, h)| h.clone()).collect();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (r, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != header.len() {
                return Err(Error::Parse {
                    row: r + 1,
                    column: String::new(),
                    message: format!("expected {} fields, found {}", header.len(), record.len()),
                });
            }
            let mut row = Vec::with_capacity(feature_names.len());
            for (c, cell) in record.iter().enumerate() {
                let value: f64 = cell.parse().map_err(|_| Error::Parse {
                    row: r + 1,
                    column: header[c].clone(),
                    message: format!("non-numeric value {cell:?}"),
                })?;
                if c == label_col {
                    labels.push(match value {
                        0.0 => 0,
                        1.0 => 1,
                        _ => {
                            return Err(Error::Parse {
                                row: r + 1,
                                column: header[c].clone(),
                                message: format!("label must be 0 or 1, got {cell}"),
                            })
                        }
                    });
                } else {
                    row.push(value);
                }
            }
            rows.push(row);
        }
        Dataset::new(feature_names, rows, labels)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let mut header = self.feature_names.clone();
        header.push(LABEL_COLUMN.into());
        writer.write_record(&header)?;
        for (row, y) in self.iter() {
            let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
            rec.push(y.to_string());
            writer.write_record(&rec)?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv()?)?;
        Ok(())
    }
}

pub(crate) fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Per-feature min-max scaling parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub feature_names: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::DegenerateData("cannot fit a scaler on an empty dataset".into()));
        }
        let d = data.dim();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for row in data.rows() {
            for k in 0..d {
                min[k] = min[k].min(row[k]);
                max[k] = max[k].max(row[k]);
            }
        }
        Ok(MinMaxScaler { feature_names: data.feature_names.clone(), min, max })
    }

    /// Features whose range is zero; they are mapped to 0.
    pub fn constant_features(&self) -> Vec<&str> {
        self.feature_names
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .filter(|(_, (lo, hi))| hi <= lo)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn scale_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.min.len(), x.len())?;
        Ok(x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(v, (lo, hi))| if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 })
            .collect())
    }

    pub fn unscale_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.min.len(), x.len())?;
        Ok(x.iter().zip(self.min.iter().zip(&self.max)).map(|(v, (lo, hi))| lo + v * (hi - lo)).collect())
    }

    pub fn transform(&self, data: &Dataset) -> Result<Dataset> {
        let rows = data.rows().iter().map(|r| self.scale_point(r)).collect::<Result<Vec<_>>>()?;
        Dataset::new(data.feature_names.clone(), rows, data.labels().to_vec())
    }
}

/// Two Gaussian clusters in 2-D, rescaled into `[0, 1]^2`. Class 0 sits
/// lower-left, class 1 upper-right, with `spread` as the per-axis standard
/// deviation relative to a centre distance of ~2.8.
pub fn blobs(n: usize, spread: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spread).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let centres = [[-1.0, -1.0], [1.0, 1.0]];
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = (i % 2) as u8;
        let c = centres[y as usize];
        rows.push(vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]);
        labels.push(y);
    }
    rescale(rows, labels)
}

/// Two interleaving half circles with Gaussian noise, rescaled into `[0, 1]^2`.
pub fn moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = (i % 2) as u8;
        let t: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (px, py) = if y == 0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
        rows.push(vec![px + jitter.sample(&mut rng), py + jitter.sample(&mut rng)]);
        labels.push(y);
    }
    rescale(rows, labels)
}

fn rescale(rows: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Dataset> {
    let raw = Dataset::from_rows(rows, labels)?;
    MinMaxScaler::fit(&raw)?.transform(&raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_and_train_test_sizes() {
        let data = blobs(100, 0.5, 1).unwrap();
        let (a, b) = data.split_halves(3);
        assert_eq!((a.len(), b.len()), (50, 50));
        let (train, test) = a.train_test_split(0.8, 3).unwrap();
        assert_eq!((train.len(), test.len()), (40, 10));
    }

    #[test]
    fn scaling_maps_range_to_unit_interval() {
        let raw = Dataset::from_rows(vec![vec![5.0, 1.0], vec![15.0, 1.0], vec![10.0, 1.0]], vec![0, 1, 0]).unwrap();
        let scaler = MinMaxScaler::fit(&raw).unwrap();
        let scaled = scaler.transform(&raw).unwrap();
        assert_eq!(scaled.rows()[2][0], 0.5);
        assert_eq!(scaler.constant_features(), vec!["x1"]);
        assert!(scaled.rows().iter().all(|r| r[1] == 0.0));
        assert_eq!(scaler.unscale_point(&[0.5, 0.0]).unwrap()[0], 10.0);
    }

    #[test]
    fn missing_label_column_is_a_parse_error() {
        let err = Dataset::parse_csv("a,b\n1,2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { ref column, .. } if column == "label"));
    }

    #[test]
    fn non_numeric_cell_reports_row_and_column() {
        let err = Dataset::parse_csv("a,label\n1,0\nfoo,1\n").unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "a");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        let data = moons(30, 0.1, 9).unwrap();
        let back = Dataset::parse_csv(&data.to_csv().unwrap()).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn generators_are_deterministic_and_in_range() {
        let a = blobs(200, 0.6, 7).unwrap();
        assert_eq!(a, blobs(200, 0.6, 7).unwrap());
        a.ensure_unit_range().unwrap();
        assert_eq!(a.count_label(1), 100);
        moons(50, 0.2, 1).unwrap().ensure_unit_range().unwrap();
    }
}
