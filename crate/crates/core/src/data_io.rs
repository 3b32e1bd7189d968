//! Dataset loading, min-max scaling and stratified fold construction.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_LABEL_COLUMN: &str = "label";

/// Feature matrix with binary ground truth (0 = normal, 1 = anomaly).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Array2<f64>, labels: Vec<u8>) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::Empty("dataset has no rows"));
        }
        if features.ncols() == 0 {
            return Err(Error::Empty("dataset has no feature columns"));
        }
        Error::check_dim(features.nrows(), labels.len())?;
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::invalid(format!("label {bad} is not 0 or 1")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_dims(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_anomalies(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn anomaly_fraction(&self) -> f64 {
        self.n_anomalies() as f64 / self.n_samples() as f64
    }

    pub fn rows(&self, indices: &[usize]) -> Array2<f64> {
        self.features.select(Axis(0), indices)
    }
}

/// Reads a headered CSV. Every column except `label_column` must be numeric;
/// the label column may only hold 0 or 1. Row order is preserved and no
/// scaling is applied.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| Error::MissingLabelColumn {
            path: path.to_path_buf(),
            column: label_column.to_string(),
        })?;
    let n_features = headers.len() - 1;

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        // 1-based data row, header excluded.
        let row = i + 1;
        for (col, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if col == label_idx {
                let label = match cell.parse::<f64>() {
                    Ok(0.0) => 0,
                    Ok(1.0) => 1,
                    _ => {
                        return Err(Error::UnknownLabel {
                            path: path.to_path_buf(),
                            row,
                            value: cell.to_string(),
                        })
                    }
                };
                labels.push(label);
            } else {
                let v = cell
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::NonNumeric {
                        path: path.to_path_buf(),
                        row,
                        column: headers[col].to_string(),
                        value: cell.to_string(),
                    })?;
                values.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    if n_features == 0 {
        return Err(Error::Empty("dataset has no feature columns"));
    }
    let features = Array2::from_shape_vec((labels.len(), n_features), values)
        .expect("csv reader enforces equal record lengths");
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, features, labels)
}

/// Per-feature min-max scaler onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub per_feature_min: Vec<f64>,
    pub per_feature_max: Vec<f64>,
}

impl Scaler {
    /// Fits on the rows in `fit_indices` only, so test rows never leak into the ranges.
    pub fn fit(data: &Dataset, fit_indices: &[usize]) -> Result<Self> {
        if fit_indices.is_empty() {
            return Err(Error::Empty("scaler fit indices"));
        }
        let d = data.n_dims();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for &i in fit_indices {
            if i >= data.n_samples() {
                return Err(Error::invalid(format!("row index {i} out of range")));
            }
            for (j, &v) in data.features.row(i).iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        Ok(Self {
            per_feature_min: lo,
            per_feature_max: hi,
        })
    }

    pub fn n_dims(&self) -> usize {
        self.per_feature_min.len()
    }

    /// `(v - min) / (max - min)` clamped to `[0, 1]`; constant features map to 0.
    pub fn transform(&self, rows: ArrayView2<f64>) -> Result<Array2<f64>> {
        Error::check_dim(self.n_dims(), rows.ncols())?;
        let mut out = rows.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let (lo, hi) = (self.per_feature_min[j], self.per_feature_max[j]);
                *v = if hi > lo {
                    ((*v - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    0.0
                };
            }
        }
        Ok(out)
    }

    /// Maps scaled values back to the original units. Constant features map to their single value.
    pub fn inverse_transform(&self, rows: ArrayView2<f64>) -> Result<Array2<f64>> {
        Error::check_dim(self.n_dims(), rows.ncols())?;
        let mut out = rows.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let (lo, hi) = (self.per_feature_min[j], self.per_feature_max[j]);
                *v = lo + *v * (hi - lo);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Stratified k-fold split.
///
/// Each class is shuffled with a seed-derived stream and dealt round-robin
/// over the folds. The second class continues dealing where the first one
/// stopped, so fold sizes differ by at most one and each fold's per-class
/// count differs from the ideal share by less than one.
pub fn stratified_kfold(labels: &[u8], folds: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if folds < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 folds, got {folds}"
        )));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    let mut assignment = vec![0usize; labels.len()];
    let mut next_fold = 0;
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < folds {
            return Err(Error::invalid(format!(
                "class {class} has {} members, fewer than {folds} folds",
                members.len()
            )));
        }
        members.shuffle(&mut seed::derived_rng(
            seed,
            &[seed::STREAM_FOLDS, class as u64],
        ));
        for i in members {
            assignment[i] = next_fold;
            next_fold = (next_fold + 1) % folds;
        }
    }
    Ok((0..folds)
        .map(|f| {
            let (test_indices, train_indices) =
                (0..labels.len()).partition(|&i| assignment[i] == f);
            FoldSplit {
                fold_index: f,
                train_indices,
                test_indices,
            }
        })
        .collect())
}

/// Synthetic fixtures and reference dataset shapes.
pub mod fixtures {
    use ndarray::Array2;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::Dataset;
    use crate::seed;

    /// Shape of a benchmark dataset: rows, feature count, outlier percentage.
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct DatasetShape {
        pub name: &'static str,
        pub samples: usize,
        pub dims: usize,
        pub outlier_percent: f64,
    }

    pub const ODDS_SHAPES: [DatasetShape; 8] = [
        DatasetShape {
            name: "yeast",
            samples: 1364,
            dims: 8,
            outlier_percent: 4.7,
        },
        DatasetShape {
            name: "seismic",
            samples: 2584,
            dims: 11,
            outlier_percent: 6.5,
        },
        DatasetShape {
            name: "vowels",
            samples: 1456,
            dims: 12,
            outlier_percent: 3.4,
        },
        DatasetShape {
            name: "annthyroid",
            samples: 7200,
            dims: 6,
            outlier_percent: 7.42,
        },
        DatasetShape {
            name: "satellite",
            samples: 6435,
            dims: 36,
            outlier_percent: 32.0,
        },
        DatasetShape {
            name: "cardio",
            samples: 1831,
            dims: 21,
            outlier_percent: 9.6,
        },
        DatasetShape {
            name: "mammography",
            samples: 11183,
            dims: 6,
            outlier_percent: 2.32,
        },
        DatasetShape {
            name: "thyroid",
            samples: 3772,
            dims: 6,
            outlier_percent: 2.5,
        },
    ];

    pub fn odds_shape(name: &str) -> Option<DatasetShape> {
        let name = name.to_ascii_lowercase();
        ODDS_SHAPES.iter().copied().find(|s| s.name == name)
    }

    /// True when `data` has the listed row and column counts and its outlier
    /// share rounds to the listed percentage (within half a unit in the last
    /// printed digit, plus one sample).
    pub fn matches_shape(data: &Dataset, shape: &DatasetShape) -> bool {
        let pct = 100.0 * data.anomaly_fraction();
        let tol = 0.05 + 100.0 / shape.samples as f64;
        data.n_samples() == shape.samples
            && data.n_dims() == shape.dims
            && (pct - shape.outlier_percent).abs() <= tol
    }

    /// Isotropic standard-normal cluster of `n_normal` rows plus `n_outliers`
    /// rows placed `distance` standard deviations from the origin along
    /// random directions. Outliers come last.
    pub fn cluster_with_outliers(
        n_normal: usize,
        n_outliers: usize,
        dims: usize,
        distance: f64,
        seed: u64,
    ) -> Dataset {
        let mut rng = seed::rng(seed);
        let mut features = Array2::zeros((n_normal + n_outliers, dims));
        for mut row in features.rows_mut().into_iter().take(n_normal) {
            for v in row.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
        }
        for mut row in features.rows_mut().into_iter().skip(n_normal) {
            let dir: Vec<f64> = (0..dims).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dir
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            for (v, d) in row.iter_mut().zip(&dir) {
                *v = distance * d / norm + 0.1 * rng.random::<f64>();
            }
        }
        let mut labels = vec![0u8; n_normal];
        labels.extend(std::iter::repeat_n(1u8, n_outliers));
        Dataset::new("synthetic", features, labels).expect("fixture is well formed")
    }
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use ndarray::array;

    use super::*;

    fn write_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_small_csv() {
        let f = write_csv("a,b,label\n1,2,0\n3,4,0\n5,6,0\n7,8.5,1\n");
        let d = load_csv(f.path(), "label").unwrap();
        assert_eq!(d.n_samples(), 4);
        assert_eq!(d.n_dims(), 2);
        assert_eq!(d.labels, vec![0, 0, 0, 1]);
        assert_eq!(d.features[[3, 1]], 8.5);
    }

    #[test]
    fn label_column_can_be_anywhere() {
        let f = write_csv("y,a\n1,0.5\n0,0.25\n");
        let d = load_csv(f.path(), "y").unwrap();
        assert_eq!(d.labels, vec![1, 0]);
        assert_eq!(d.features.column(0).to_vec(), vec![0.5, 0.25]);
    }

    #[test]
    fn rejects_bad_label() {
        let f = write_csv("a,label\n1,0\n2,2\n");
        match load_csv(f.path(), "label") {
            Err(Error::UnknownLabel { row, value, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(value, "2");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reports_non_numeric_cell_position() {
        let f = write_csv("a,b,label\n1,2,0\n3,x,1\n");
        match load_csv(f.path(), "label") {
            Err(Error::NonNumeric { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "b");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_and_empty_files() {
        assert!(matches!(
            load_csv("/nonexistent/file.csv", "label"),
            Err(Error::Io { .. })
        ));
        let f = write_csv("a,label\n");
        assert!(matches!(
            load_csv(f.path(), "label"),
            Err(Error::EmptyFile(_))
        ));
        let f = write_csv("");
        assert!(load_csv(f.path(), "label").is_err());
        let f = write_csv("a,b\n1,0\n");
        assert!(matches!(
            load_csv(f.path(), "label"),
            Err(Error::MissingLabelColumn { .. })
        ));
    }

    fn one_column(values: &[f64]) -> Dataset {
        let n = values.len();
        Dataset::new(
            "t",
            Array2::from_shape_vec((n, 1), values.to_vec()).unwrap(),
            vec![0; n],
        )
        .unwrap()
    }

    #[test]
    fn scaler_min_max() {
        let s = Scaler::fit(&one_column(&[0.0, 10.0, 5.0]), &[0, 1, 2]).unwrap();
        assert_eq!(s.per_feature_min, vec![0.0]);
        assert_eq!(s.per_feature_max, vec![10.0]);
        let out = s.transform(array![[5.0], [12.0], [-1.0]].view()).unwrap();
        assert_eq!(out, array![[0.5], [1.0], [0.0]]);
    }

    #[test]
    fn scaler_degenerate_feature() {
        let s = Scaler::fit(&one_column(&[3.0, 3.0, 3.0]), &[0, 1, 2]).unwrap();
        assert_eq!((s.per_feature_min[0], s.per_feature_max[0]), (3.0, 3.0));
        let out = s.transform(array![[3.0], [100.0]].view()).unwrap();
        assert_eq!(out, array![[0.0], [0.0]]);
    }

    #[test]
    fn scaler_fits_only_given_rows() {
        let d = one_column(&[0.0, 10.0, 50.0]);
        let s = Scaler::fit(&d, &[0, 1]).unwrap();
        let out = s.transform(d.features.view()).unwrap();
        assert_eq!(out[[2, 0]], 1.0);
        assert!(Scaler::fit(&d, &[]).is_err());
        assert!(s.transform(array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn kfold_exact_divisibility() {
        let mut labels = vec![0u8; 90];
        labels.extend([1u8; 10]);
        let folds = stratified_kfold(&labels, 10, 3).unwrap();
        assert_eq!(folds.len(), 10);
        for f in &folds {
            let anomalies = f.test_indices.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!(anomalies, 1);
            assert_eq!(f.test_indices.len() - anomalies, 9);
            assert_eq!(f.train_indices.len(), 90);
        }
    }

    #[test]
    fn kfold_is_deterministic_per_seed() {
        let labels: Vec<u8> = (0..60).map(|i| (i % 6 == 0) as u8).collect();
        assert_eq!(
            stratified_kfold(&labels, 5, 7).unwrap(),
            stratified_kfold(&labels, 5, 7).unwrap()
        );
        assert_ne!(
            stratified_kfold(&labels, 5, 7).unwrap(),
            stratified_kfold(&labels, 5, 8).unwrap()
        );
    }

    #[test]
    fn kfold_yeast_sized_folds() {
        // 1364 rows with 4.7% outliers, as in the Yeast benchmark.
        let n_anom = (1364.0_f64 * 0.047).round() as usize;
        let labels: Vec<u8> = (0..1364).map(|i| (i < n_anom) as u8).collect();
        let folds = stratified_kfold(&labels, 10, 0).unwrap();
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.test_indices.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..1364).collect::<Vec<_>>());
        for f in &folds {
            assert!(matches!(f.test_indices.len(), 136 | 137));
        }
    }

    #[test]
    fn kfold_rejects_small_class() {
        let labels = [0, 0, 0, 0, 1];
        assert!(stratified_kfold(&labels, 2, 0).is_err());
        assert!(stratified_kfold(&[0, 1, 0, 1], 1, 0).is_err());
    }

    #[test]
    fn fixture_shapes() {
        let d = fixtures::cluster_with_outliers(50, 5, 3, 10.0, 1);
        assert_eq!(d.n_samples(), 55);
        assert_eq!(d.n_anomalies(), 5);
        for row in d.features.rows().into_iter().skip(50) {
            let r = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(r > 9.5, "outlier radius {r}");
        }
        assert!(fixtures::odds_shape("Mammography").is_some());
    }
}
