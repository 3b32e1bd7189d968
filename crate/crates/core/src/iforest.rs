//! Isolation forest, used here only to pseudo-label rows as normal or
//! anomalous for Siamese pair construction.

use ndarray::{ArrayView1, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const EULER_GAMMA: f64 = 0.577_215_664_9;

/// `H(k) ~ ln(k) + gamma`.
pub fn harmonic(k: f64) -> f64 {
    k.ln() + EULER_GAMMA
}

/// Average unsuccessful-search path length in a binary search tree of `n`
/// nodes: `c(n) = 2 H(n - 1) - 2 (n - 1) / n`, and 0 for `n <= 1`.
pub fn average_path_length(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let n = n as f64;
    2.0 * harmonic(n - 1.0) - 2.0 * (n - 1.0) / n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IForestConfig {
    pub n_trees: usize,
    pub subsample_size: usize,
}

impl Default for IForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            subsample_size: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        value: f64,
        /// Rows with `x[feature] < value`.
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        size: usize,
    },
}

impl Node {
    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolationTree {
    pub root: Node,
    /// Row indices this tree was grown on (drawn without replacement).
    pub sample: Vec<usize>,
}

impl IsolationTree {
    /// Depth of the leaf reached by `row`, plus `c(size)` for leaves holding more than one row.
    pub fn path_length(&self, row: ArrayView1<f64>) -> f64 {
        let mut node = &self.root;
        let mut depth = 0usize;
        loop {
            match node {
                Node::Leaf { size } => return depth as f64 + average_path_length(*size),
                Node::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    node = if row[*feature] < *value { left } else { right };
                    depth += 1;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolationForestModel {
    pub trees: Vec<IsolationTree>,
    /// Subsample size actually used: `min(config.subsample_size, n)`.
    pub subsample_size: usize,
    pub n_dims: usize,
}

impl IsolationForestModel {
    pub fn normalizer(&self) -> f64 {
        average_path_length(self.subsample_size)
    }

    pub fn mean_path_length(&self, row: ArrayView1<f64>) -> Result<f64> {
        Error::check_dim(self.n_dims, row.len())?;
        let total: f64 = self.trees.iter().map(|t| t.path_length(row)).sum();
        Ok(total / self.trees.len() as f64)
    }

    /// `2^(-E[h] / c(subsample_size))`, strictly inside `(0, 1)`.
    pub fn score(&self, row: ArrayView1<f64>) -> Result<f64> {
        Ok(score_from_path_length(
            self.mean_path_length(row)?,
            self.subsample_size,
        ))
    }

    pub fn scores(&self, rows: ArrayView2<f64>) -> Result<Vec<f64>> {
        Error::check_dim(self.n_dims, rows.ncols())?;
        rows.rows().into_iter().map(|r| self.score(r)).collect()
    }

    pub fn pseudo_label(&self, rows: ArrayView2<f64>, contamination: f64) -> Result<Vec<u8>> {
        pseudo_label(&self.scores(rows)?, contamination)
    }
}

pub fn score_from_path_length(mean_path: f64, subsample_size: usize) -> f64 {
    2f64.powf(-mean_path / average_path_length(subsample_size))
}

/// Grows `config.n_trees` trees, each on its own without-replacement
/// subsample, with height limit `ceil(log2(subsample))`.
pub fn build_forest(
    rows: ArrayView2<f64>,
    config: &IForestConfig,
    seed: u64,
) -> Result<IsolationForestModel> {
    let n = rows.nrows();
    if n < 2 {
        return Err(Error::invalid(format!(
            "isolation forest needs at least 2 rows, got {n}"
        )));
    }
    if config.n_trees == 0 || config.subsample_size < 2 {
        return Err(Error::invalid(
            "need at least one tree and a subsample of 2",
        ));
    }
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("isolation forest rows"));
    }
    let psi = config.subsample_size.min(n);
    let height_limit = (psi as f64).log2().ceil() as usize;
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::derived_rng(seed, &[seed::STREAM_FOREST, t as u64]);
            let sample = rand::seq::index::sample(&mut rng, n, psi).into_vec();
            let root = grow(rows, &sample, 0, height_limit, &mut rng);
            IsolationTree { root, sample }
        })
        .collect();
    Ok(IsolationForestModel {
        trees,
        subsample_size: psi,
        n_dims: rows.ncols(),
    })
}

fn grow(
    rows: ArrayView2<f64>,
    idx: &[usize],
    depth: usize,
    limit: usize,
    rng: &mut seed::Rng,
) -> Node {
    if depth >= limit || idx.len() <= 1 {
        return Node::Leaf { size: idx.len() };
    }
    let candidates: Vec<(usize, f64, f64)> = (0..rows.ncols())
        .filter_map(|f| {
            let (lo, hi) = idx
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = rows[[i, f]];
                    (lo.min(v), hi.max(v))
                });
            (hi > lo).then_some((f, lo, hi))
        })
        .collect();
    if candidates.is_empty() {
        return Node::Leaf { size: idx.len() };
    }
    let (feature, lo, hi) = candidates[rng.random_range(0..candidates.len())];
    let value = loop {
        let v = rng.random_range(lo..hi);
        if v > lo {
            break v;
        }
    };
    let (left, right): (Vec<usize>, Vec<usize>) =
        idx.iter().partition(|&&i| rows[[i, feature]] < value);
    Node::Split {
        feature,
        value,
        left: Box::new(grow(rows, &left, depth + 1, limit, rng)),
        right: Box::new(grow(rows, &right, depth + 1, limit, rng)),
    }
}

/// Labels the `ceil(contamination * n)` highest-scoring rows as 1, breaking
/// ties by lower row index.
///
/// The product is nudged down by 1e-9 before rounding up so that values like
/// `0.07 * 100 = 7.000000000000001` count as 7.
pub fn pseudo_label(scores: &[f64], contamination: f64) -> Result<Vec<u8>> {
    if !(contamination > 0.0 && contamination < 1.0) {
        return Err(Error::invalid(format!(
            "contamination {contamination} outside (0, 1)"
        )));
    }
    if scores.is_empty() {
        return Err(Error::Empty("rows to pseudo-label"));
    }
    let count = anomaly_count(scores.len(), contamination);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut labels = vec![0u8; scores.len()];
    for &i in &order[..count] {
        labels[i] = 1;
    }
    Ok(labels)
}

pub fn anomaly_count(n: usize, contamination: f64) -> usize {
    ((contamination * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

#[cfg(test)]
mod tests {
    use ndarray::{array, Array2};

    use super::*;

    #[test]
    fn normalizer_values() {
        assert_eq!(average_path_length(1), 0.0);
        assert!((average_path_length(2) - (2.0 * EULER_GAMMA - 1.0)).abs() < 1e-15);
        assert!((average_path_length(2) - 0.15443).abs() < 1e-5);
        let c256 = average_path_length(256);
        assert!((c256 - (2.0 * ((255f64).ln() + EULER_GAMMA) - 2.0 * 255.0 / 256.0)).abs() < 1e-12);
    }

    #[test]
    fn score_fixed_point_is_half() {
        for psi in [2, 17, 256] {
            assert_eq!(score_from_path_length(average_path_length(psi), psi), 0.5);
        }
    }

    #[test]
    fn identical_rows_give_single_leaves() {
        let rows = array![[1.0, 2.0], [1.0, 2.0]];
        let f = build_forest(rows.view(), &IForestConfig::default(), 0).unwrap();
        assert_eq!(f.trees.len(), 200);
        assert!(f.trees.iter().all(|t| t.root == Node::Leaf { size: 2 }));
        let s = f.score(rows.row(0)).unwrap();
        assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn needs_two_rows() {
        assert!(build_forest(array![[1.0]].view(), &IForestConfig::default(), 0).is_err());
    }

    #[test]
    fn structure_invariants() {
        let rows = Array2::from_shape_fn((300, 3), |(i, j)| ((i * 31 + j * 17) % 97) as f64);
        let f = build_forest(
            rows.view(),
            &IForestConfig {
                n_trees: 20,
                subsample_size: 64,
            },
            5,
        )
        .unwrap();
        for t in &f.trees {
            assert!(t.root.depth() <= 6);
            let mut s = t.sample.clone();
            s.sort_unstable();
            s.dedup();
            assert_eq!(s.len(), 64);
        }
        assert!(f.score(array![1.0, 2.0].view()).is_err());
    }

    #[test]
    fn pseudo_label_counts_and_ties() {
        let scores: Vec<f64> = (0..100).map(|i| (i % 7) as f64).collect();
        let l = pseudo_label(&scores, 0.1).unwrap();
        assert_eq!(l.iter().filter(|&&v| v == 1).count(), 10);
        let flat = vec![0.5; 100];
        let l = pseudo_label(&flat, 0.1).unwrap();
        assert!(l[..10].iter().all(|&v| v == 1));
        assert!(l[10..].iter().all(|&v| v == 0));
        assert!(pseudo_label(&flat, 0.0).is_err());
        assert!(pseudo_label(&flat, 1.0).is_err());
        assert_eq!(anomaly_count(100, 0.07), 7);
        assert_eq!(anomaly_count(3, 0.1), 1);
    }
}
