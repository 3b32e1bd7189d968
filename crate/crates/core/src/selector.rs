//! Exact k-nearest-neighbor selection over the pooled train and test rows.

use std::cmp::Ordering;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::siamese::{cosine_similarity, SiameseModel};

#[derive(Debug, Clone)]
pub enum Metric {
    Euclidean,
    /// Cosine similarity of Siamese tower embeddings; neighbors are ranked
    /// by descending similarity (distance `1 - similarity`).
    Learned(Arc<SiameseModel>),
}

#[derive(Debug, Clone)]
pub struct NeighborIndex {
    rows: Array2<f64>,
    metric: Metric,
    embeddings: Option<Array2<f64>>,
}

impl NeighborIndex {
    /// For the learned metric every row's embedding is computed once here.
    pub fn build(rows: Array2<f64>, metric: Metric) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(Error::Empty("neighbor index rows"));
        }
        let embeddings = match &metric {
            Metric::Euclidean => None,
            Metric::Learned(model) => Some(model.embed_rows(rows.view())?),
        };
        Ok(Self {
            rows,
            metric,
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn n_dims(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn embeddings(&self) -> Option<&Array2<f64>> {
        self.embeddings.as_ref()
    }

    /// Ranking key of every indexed row against `probe`; smaller is closer.
    /// Squared Euclidean distance, or negated cosine similarity.
    pub fn ranking_keys(&self, probe: ArrayView1<f64>) -> Result<Vec<f64>> {
        Error::check_dim(self.n_dims(), probe.len())?;
        if probe.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("query row"));
        }
        match (&self.metric, &self.embeddings) {
            (Metric::Learned(model), Some(emb)) => {
                let e = model.embed(probe)?;
                Ok(emb
                    .rows()
                    .into_iter()
                    .map(|r| -cosine_similarity(&e, r.as_slice().expect("standard layout")))
                    .collect())
            }
            _ => Ok(self
                .rows
                .rows()
                .into_iter()
                .map(|r| {
                    r.iter()
                        .zip(probe.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum()
                })
                .collect()),
        }
    }

    /// The `k` closest rows, nearest first, ties broken by lower row index.
    /// `probe_identity` names the probe's own row, which is never returned.
    pub fn query(
        &self,
        probe: ArrayView1<f64>,
        probe_identity: Option<usize>,
        k: usize,
    ) -> Result<Vec<usize>> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let available = self.len() - usize::from(probe_identity.is_some_and(|i| i < self.len()));
        if k > available {
            return Err(Error::invalid(format!(
                "k = {k} exceeds the {available} selectable rows"
            )));
        }
        let keys = self.ranking_keys(probe)?;
        let mut candidates: Vec<(f64, usize)> = keys
            .into_iter()
            .enumerate()
            .filter(|&(i, _)| Some(i) != probe_identity)
            .map(|(i, key)| (key, i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
        };
        if k < candidates.len() {
            candidates.select_nth_unstable_by(k - 1, cmp);
            candidates.truncate(k);
        }
        candidates.sort_unstable_by(cmp);
        Ok(candidates.into_iter().map(|(_, i)| i).collect())
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;
    use crate::siamese::SiameseConfig;

    #[test]
    fn euclidean_nearest() {
        let idx = NeighborIndex::build(
            array![[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]],
            Metric::Euclidean,
        )
        .unwrap();
        assert_eq!(idx.len(), 3);
        assert_eq!(
            idx.query(array![0.9, 0.0].view(), None, 1).unwrap(),
            vec![1]
        );
        assert_eq!(
            idx.query(array![0.9, 0.0].view(), None, 3).unwrap(),
            vec![1, 0, 2]
        );
    }

    #[test]
    fn self_exclusion() {
        let idx = NeighborIndex::build(
            array![[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]],
            Metric::Euclidean,
        )
        .unwrap();
        assert_eq!(
            idx.query(array![1.0, 0.0].view(), Some(1), 1).unwrap(),
            vec![0]
        );
        assert!(idx.query(array![1.0, 0.0].view(), Some(1), 3).is_err());
        assert!(idx.query(array![1.0, 0.0].view(), None, 0).is_err());
    }

    #[test]
    fn ties_prefer_lower_index() {
        let idx =
            NeighborIndex::build(array![[1.0], [-1.0], [1.0], [3.0]], Metric::Euclidean).unwrap();
        assert_eq!(
            idx.query(array![0.0].view(), None, 3).unwrap(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn learned_metric_caches_embeddings() {
        let model = Arc::new(SiameseModel::init(2, &SiameseConfig::default(), 3).unwrap());
        let rows = array![[0.1, 0.2], [0.5, 0.9], [0.8, 0.1], [0.3, 0.3]];
        let idx = NeighborIndex::build(rows.clone(), Metric::Learned(model.clone())).unwrap();
        assert_eq!(idx.embeddings().unwrap().nrows(), 4);
        let again = NeighborIndex::build(rows.clone(), Metric::Learned(model)).unwrap();
        for i in 0..4 {
            assert_eq!(
                idx.query(rows.row(i), Some(i), 2).unwrap(),
                again.query(rows.row(i), Some(i), 2).unwrap()
            );
        }
        assert!(idx.query(array![0.1].view(), None, 1).is_err());
    }

    #[test]
    fn empty_index_rejected() {
        assert!(NeighborIndex::build(Array2::zeros((0, 2)), Metric::Euclidean).is_err());
    }
}
