//! Test-time augmentation inference: per test instance, select neighbors,
//! produce augmentations, score everything with one detector and average.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::AutoencoderModel;
use crate::error::{Error, Result};
use crate::producers::{self, SmoteForm};
use crate::seed;
use crate::selector::{Metric, NeighborIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Producer {
    None,
    Kmeans,
    Smote,
    Gaussian,
}

impl Producer {
    pub fn as_str(self) -> &'static str {
        match self {
            Producer::None => "none",
            Producer::Kmeans => "kmeans",
            Producer::Smote => "smote",
            Producer::Gaussian => "gaussian",
        }
    }

    /// Whether augmentations are built from a neighbor subset.
    pub fn uses_neighbors(self) -> bool {
        matches!(self, Producer::Kmeans | Producer::Smote)
    }
}

impl fmt::Display for Producer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Producer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Producer::None),
            "kmeans" => Ok(Producer::Kmeans),
            "smote" => Ok(Producer::Smote),
            "gaussian" => Ok(Producer::Gaussian),
            other => Err(Error::invalid(format!("unknown producer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Euclidean,
    Learned,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Euclidean => "euclidean",
            MetricKind::Learned => "learned",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(MetricKind::Euclidean),
            "learned" => Ok(MetricKind::Learned),
            other => Err(Error::invalid(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TtadConfig {
    pub k: usize,
    pub t: usize,
    pub producer: Producer,
    pub metric: MetricKind,
    /// Fraction of rows the isolation forest pseudo-labels as anomalous.
    pub contamination: f64,
    pub seed: u64,
    /// Noise standard deviation for the Gaussian producer.
    pub sigma: f64,
    pub smote_form: SmoteForm,
}

impl Default for TtadConfig {
    fn default() -> Self {
        Self {
            k: 10,
            t: 7,
            producer: Producer::Kmeans,
            metric: MetricKind::Euclidean,
            contamination: 0.1,
            seed: 0,
            sigma: 0.1,
            smote_form: SmoteForm::Signed,
        }
    }
}

impl TtadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.producer != Producer::None && self.t < 1 {
            return Err(Error::invalid("T must be at least 1"));
        }
        if self.producer == Producer::Kmeans && self.t > self.k {
            return Err(Error::invalid(format!(
                "k-Means producer needs T <= k, got T = {} and k = {}",
                self.t, self.k
            )));
        }
        if !(self.contamination > 0.0 && self.contamination < 1.0) {
            return Err(Error::invalid(format!(
                "contamination {} outside (0, 1)",
                self.contamination
            )));
        }
        if self.producer == Producer::Gaussian && !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma {} must be positive",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Augmentations generated per instance (0 for the plain detector).
    pub fn augmentations(&self) -> usize {
        if self.producer == Producer::None {
            0
        } else {
            self.t
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredInstance {
    pub id: usize,
    pub raw: f64,
    pub aug_scores: Vec<f64>,
    pub aggregated: f64,
}

/// `(raw + sum(aug_scores)) / (T + 1)`, kept inside the component range so
/// rounding never pushes it outside `[min, max]`.
pub fn aggregate(raw: f64, aug_scores: &[f64]) -> f64 {
    if aug_scores.is_empty() {
        return raw;
    }
    let (lo, hi) = aug_scores
        .iter()
        .fold((raw, raw), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let sum: f64 = raw + aug_scores.iter().sum::<f64>();
    (sum / (aug_scores.len() + 1) as f64).clamp(lo, hi)
}

/// Length-checked [`aggregate`].
pub fn aggregate_checked(raw: f64, aug_scores: &[f64], t: usize) -> Result<f64> {
    if aug_scores.len() != t {
        return Err(Error::invalid(format!(
            "expected {t} augmentation scores, got {}",
            aug_scores.len()
        )));
    }
    Ok(aggregate(raw, aug_scores))
}

/// Seed of one instance's augmentation draws; depends only on the run seed
/// and the instance id, never on iteration order.
pub fn instance_seed(run_seed: u64, id: usize) -> u64 {
    seed::derive(run_seed, &[seed::STREAM_AUGMENT, id as u64])
}

/// Scores `test_rows` with test-time augmentation.
///
/// `test_ids[i]` is the row of `index` holding `test_rows[i]`; it is
/// excluded from that instance's neighbors and keys its random stream.
pub fn ttad_predict(
    config: &TtadConfig,
    detector: &AutoencoderModel,
    index: &NeighborIndex,
    test_rows: ArrayView2<f64>,
    test_ids: &[usize],
) -> Result<Vec<ScoredInstance>> {
    config.validate()?;
    Error::check_dim(detector.input_dim(), test_rows.ncols())?;
    Error::check_dim(index.n_dims(), test_rows.ncols())?;
    if test_ids.len() != test_rows.nrows() {
        return Err(Error::invalid(format!(
            "{} ids for {} test rows",
            test_ids.len(),
            test_rows.nrows()
        )));
    }
    if config.metric == MetricKind::Learned
        && config.producer.uses_neighbors()
        && !matches!(index.metric(), Metric::Learned(_))
    {
        return Err(Error::invalid(
            "learned metric requested but index is Euclidean",
        ));
    }

    if config.producer == Producer::None {
        let raw = detector.anomaly_score(test_rows)?;
        return Ok(test_ids
            .iter()
            .zip(raw)
            .map(|(&id, raw)| ScoredInstance {
                id,
                raw,
                aug_scores: Vec::new(),
                aggregated: raw,
            })
            .collect());
    }

    (0..test_rows.nrows())
        .into_par_iter()
        .map(|i| {
            let row = test_rows.row(i);
            let id = test_ids[i];
            let seed = instance_seed(config.seed, id);
            let batch = match config.producer {
                Producer::Gaussian => {
                    producers::gaussian_produce(row, config.t, config.sigma, seed)?
                }
                Producer::Kmeans | Producer::Smote => {
                    let neighbors = index.query(row, Some(id), config.k)?;
                    let subset = index.rows().select(Axis(0), &neighbors);
                    if config.producer == Producer::Kmeans {
                        producers::kmeans_produce(subset.view(), config.t, seed)?
                    } else {
                        producers::smote_produce(
                            row,
                            subset.view(),
                            config.t,
                            config.smote_form,
                            seed,
                        )?
                    }
                }
                Producer::None => unreachable!("handled above"),
            };
            let stacked = concatenate(Axis(0), &[row.insert_axis(Axis(0)), batch.rows.view()])
                .map_err(|e| Error::invalid(e.to_string()))?;
            let scores = detector.anomaly_score(stacked.view())?;
            let raw = scores[0];
            let aug_scores = scores[1..].to_vec();
            let aggregated = aggregate_checked(raw, &aug_scores, config.t)?;
            Ok(ScoredInstance {
                id,
                raw,
                aug_scores,
                aggregated,
            })
        })
        .collect()
}
