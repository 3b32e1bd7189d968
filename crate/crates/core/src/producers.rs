//! Augmentation producers: turn a test instance and its selected neighbors
//! into `T` synthetic rows.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProducerKind {
    Kmeans,
    Smote,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationBatch {
    /// `T x d`.
    pub rows: Array2<f64>,
    pub producer: ProducerKind,
    pub source: Option<usize>,
    pub seed: u64,
}

impl AugmentationBatch {
    fn new(rows: Array2<f64>, producer: ProducerKind, seed: u64) -> Result<Self> {
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("augmentations"));
        }
        Ok(Self {
            rows,
            producer,
            source: None,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Array2<f64>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the closest centroid; ties go to the lower index.
pub fn nearest_centroid(point: ArrayView1<f64>, centroids: ArrayView2<f64>) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, centroid) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

fn assign(points: ArrayView2<f64>, centroids: ArrayView2<f64>) -> Vec<usize> {
    points
        .rows()
        .into_iter()
        .map(|p| nearest_centroid(p, centroids))
        .collect()
}

fn kmeans_plus_plus(points: ArrayView2<f64>, k: usize, rng: &mut seed::Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = points
        .rows()
        .into_iter()
        .map(|p| sq_dist(p, points.row(first)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&points.row(pick));
        for (i, p) in points.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points.row(pick)));
        }
    }
    centroids
}

/// Lloyd's algorithm from k-means++ seeds.
///
/// Stops once the largest centroid move is below `tolerance` and the
/// reassignment leaves every point in place; at that point each centroid is
/// exactly the mean of its members. An empty cluster is re-seeded at the
/// point farthest from its current centroid (taken from a cluster with more
/// than one member).
pub fn kmeans(
    points: ArrayView2<f64>,
    k: usize,
    params: &KMeansParams,
    rng: &mut seed::Rng,
) -> Result<KMeansFit> {
    let n = points.nrows();
    if n == 0 {
        return Err(Error::Empty("k-means input"));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "cannot fit {k} clusters to {n} points"
        )));
    }
    let d = points.ncols();
    let mut centroids = kmeans_plus_plus(points, k, rng);
    let mut assignment = assign(points, centroids.view());
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iterations {
        iterations += 1;
        reseed_empty(points, centroids.view(), &mut assignment, k);
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (p, &c) in points.rows().into_iter().zip(&assignment) {
            let mut row = sums.row_mut(c);
            row += &p;
            counts[c] += 1;
        }
        let mut shift = 0.0f64;
        for (c, &count) in counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let mean = sums.row(c).mapv(|v| v / count as f64);
            shift = shift.max(sq_dist(mean.view(), centroids.row(c)).sqrt());
            centroids.row_mut(c).assign(&mean);
        }
        let next = assign(points, centroids.view());
        let stable = next == assignment;
        assignment = next;
        if stable && shift < params.tolerance {
            converged = true;
            break;
        }
    }
    Ok(KMeansFit {
        centroids,
        assignment,
        iterations,
        converged,
    })
}

fn reseed_empty(
    points: ArrayView2<f64>,
    centroids: ArrayView2<f64>,
    assignment: &mut [usize],
    k: usize,
) {
    let mut counts = vec![0usize; k];
    for &c in assignment.iter() {
        counts[c] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for (i, p) in points.rows().into_iter().enumerate() {
            let owner = assignment[i];
            if counts[owner] < 2 {
                continue;
            }
            let dist = sq_dist(p, centroids.row(owner));
            if best.is_none_or(|(bd, _)| dist > bd) {
                best = Some((dist, i));
            }
        }
        if let Some((_, i)) = best {
            counts[assignment[i]] -= 1;
            assignment[i] = c;
            counts[c] = 1;
        }
    }
}

/// `T` k-Means centroids (K = T) of the neighbor subset.
pub fn kmeans_produce(subset: ArrayView2<f64>, t: usize, seed: u64) -> Result<AugmentationBatch> {
    if t < 1 {
        return Err(Error::invalid("need at least one augmentation"));
    }
    if subset.nrows() == 0 {
        return Err(Error::Empty("neighbor subset"));
    }
    if t > subset.nrows() {
        return Err(Error::invalid(format!(
            "k-Means producer needs T <= k, got T = {t} with {} neighbors",
            subset.nrows()
        )));
    }
    let fit = kmeans(subset, t, &KMeansParams::default(), &mut seed::rng(seed))?;
    AugmentationBatch::new(fit.centroids, ProducerKind::Kmeans, seed)
}

/// How the SMOTE step moves from the instance toward a neighbor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoteForm {
    /// `x + lambda * (x_k - x)`: a point on the segment between instance and neighbor.
    #[default]
    Signed,
    /// `x + lambda * |x - x_k|`, elementwise absolute difference.
    Abs,
}

impl fmt::Display for SmoteForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SmoteForm::Signed => "signed",
            SmoteForm::Abs => "abs",
        })
    }
}

impl FromStr for SmoteForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signed" => Ok(SmoteForm::Signed),
            "abs" => Ok(SmoteForm::Abs),
            other => Err(Error::invalid(format!("unknown SMOTE form `{other}`"))),
        }
    }
}

/// Source of the interpolation factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    /// Uniform on `[0, 1)`, drawn per augmentation.
    Uniform,
    Fixed(f64),
}

/// The signed form is evaluated as `(1 - lambda) x + lambda x_k`, which is
/// algebraically `x + lambda (x_k - x)` and hits both endpoints exactly.
pub fn smote_point(
    instance: ArrayView1<f64>,
    neighbor: ArrayView1<f64>,
    lambda: f64,
    form: SmoteForm,
) -> Vec<f64> {
    instance
        .iter()
        .zip(neighbor.iter())
        .map(|(&x, &n)| match form {
            SmoteForm::Signed => (1.0 - lambda) * x + lambda * n,
            SmoteForm::Abs => x + lambda * (x - n).abs(),
        })
        .collect()
}

/// `T` SMOTE samples, each toward a uniformly drawn neighbor from `subset`.
pub fn smote_produce(
    instance: ArrayView1<f64>,
    subset: ArrayView2<f64>,
    t: usize,
    form: SmoteForm,
    seed: u64,
) -> Result<AugmentationBatch> {
    smote_produce_with(instance, subset, t, form, Lambda::Uniform, seed)
}

pub fn smote_produce_with(
    instance: ArrayView1<f64>,
    subset: ArrayView2<f64>,
    t: usize,
    form: SmoteForm,
    lambda: Lambda,
    seed: u64,
) -> Result<AugmentationBatch> {
    if subset.nrows() == 0 {
        return Err(Error::Empty("neighbor subset"));
    }
    Error::check_dim(instance.len(), subset.ncols())?;
    if let Lambda::Fixed(l) = lambda {
        if !(0.0..=1.0).contains(&l) {
            return Err(Error::invalid(format!("lambda {l} outside [0, 1]")));
        }
    }
    let mut rng = seed::rng(seed);
    let mut rows = Array2::zeros((t, instance.len()));
    for mut out in rows.rows_mut() {
        let neighbor = subset.row(rng.random_range(0..subset.nrows()));
        let l = match lambda {
            Lambda::Uniform => rng.random::<f64>(),
            Lambda::Fixed(l) => l,
        };
        for (o, v) in out.iter_mut().zip(smote_point(instance, neighbor, l, form)) {
            *o = v;
        }
    }
    AugmentationBatch::new(rows, ProducerKind::Smote, seed)
}

/// `T` copies of `instance` plus i.i.d. `N(0, sigma^2)` noise, clamped to `[0, 1]`.
pub fn gaussian_produce(
    instance: ArrayView1<f64>,
    t: usize,
    sigma: f64,
    seed: u64,
) -> Result<AugmentationBatch> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma {sigma} must be positive")));
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = seed::rng(seed);
    let mut rows = Array2::zeros((t, instance.len()));
    for mut out in rows.rows_mut() {
        for (o, &x) in out.iter_mut().zip(instance.iter()) {
            *o = (x + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    AugmentationBatch::new(rows, ProducerKind::Gaussian, seed)
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let b = kmeans_produce(array![[0.0, 0.0], [0.0, 2.0]].view(), 1, 0).unwrap();
        assert_eq!(b.rows, array![[0.0, 1.0]]);
        assert_eq!(b.producer, ProducerKind::Kmeans);
    }

    #[test]
    fn kmeans_separated_pairs() {
        let subset = array![[0.0, 0.0], [0.0, 0.1], [10.0, 10.0], [10.0, 10.1]];
        for seed in 0..20 {
            let b = kmeans_produce(subset.view(), 2, seed).unwrap();
            let mut c: Vec<(f64, f64)> = b.rows.rows().into_iter().map(|r| (r[0], r[1])).collect();
            c.sort_by(|a, b| a.0.total_cmp(&b.0));
            assert!(
                (c[0].0 - 0.0).abs() < 1e-12 && (c[0].1 - 0.05).abs() < 1e-12,
                "{c:?}"
            );
            assert!(
                (c[1].0 - 10.0).abs() < 1e-12 && (c[1].1 - 10.05).abs() < 1e-12,
                "{c:?}"
            );
        }
    }

    #[test]
    fn kmeans_rejects_bad_t() {
        let subset = array![[0.0], [1.0]];
        assert!(kmeans_produce(subset.view(), 3, 0).is_err());
        assert!(kmeans_produce(subset.view(), 0, 0).is_err());
    }

    #[test]
    fn kmeans_handles_duplicates() {
        let subset = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [2.0, 2.0]];
        let b = kmeans_produce(subset.view(), 3, 4).unwrap();
        assert_eq!(b.len(), 3);
        assert!(b.rows.iter().all(|v| (1.0..=2.0).contains(v)));
    }

    #[test]
    fn smote_endpoints_and_midpoint() {
        let x = array![0.2, 0.7];
        let subset = array![[0.9, 0.1]];
        let zero = smote_produce_with(
            x.view(),
            subset.view(),
            3,
            SmoteForm::Signed,
            Lambda::Fixed(0.0),
            1,
        )
        .unwrap();
        assert!(zero.rows.rows().into_iter().all(|r| r == x));
        let one = smote_produce_with(
            x.view(),
            subset.view(),
            3,
            SmoteForm::Signed,
            Lambda::Fixed(1.0),
            1,
        )
        .unwrap();
        assert!(one.rows.rows().into_iter().all(|r| r == subset.row(0)));
        assert_eq!(
            smote_point(
                array![0.0, 0.0].view(),
                array![2.0, 4.0].view(),
                0.5,
                SmoteForm::Signed
            ),
            vec![1.0, 2.0]
        );
        assert_eq!(
            smote_point(
                array![3.0, 0.0].view(),
                array![1.0, 4.0].view(),
                0.5,
                SmoteForm::Abs
            ),
            vec![4.0, 2.0]
        );
    }

    #[test]
    fn smote_errors() {
        let x = array![0.2, 0.7];
        assert!(smote_produce(
            x.view(),
            Array2::zeros((0, 2)).view(),
            2,
            SmoteForm::Signed,
            0
        )
        .is_err());
        assert!(smote_produce(
            x.view(),
            Array2::zeros((2, 3)).view(),
            2,
            SmoteForm::Signed,
            0
        )
        .is_err());
        assert!("sideways".parse::<SmoteForm>().is_err());
    }

    #[test]
    fn gaussian_small_sigma_and_clamping() {
        let x = array![0.3, 0.6, 0.0];
        let b = gaussian_produce(x.view(), 50, 1e-12, 3).unwrap();
        for r in b.rows.rows() {
            for (a, e) in r.iter().zip(x.iter()) {
                assert!((a - e).abs() < 1e-9);
            }
        }
        let wide = gaussian_produce(x.view(), 200, 5.0, 3).unwrap();
        assert!(wide.rows.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(gaussian_produce(x.view(), 2, 0.0, 0).is_err());
        assert!(gaussian_produce(x.view(), 2, -1.0, 0).is_err());
    }

    #[test]
    fn producers_are_deterministic() {
        let subset = Array2::from_shape_fn((10, 3), |(i, j)| ((i * 7 + j * 3) % 10) as f64 / 10.0);
        let x = subset.row(0);
        assert_eq!(
            kmeans_produce(subset.view(), 4, 9).unwrap(),
            kmeans_produce(subset.view(), 4, 9).unwrap()
        );
        assert_eq!(
            smote_produce(x, subset.view(), 5, SmoteForm::Signed, 9).unwrap(),
            smote_produce(x, subset.view(), 5, SmoteForm::Signed, 9).unwrap()
        );
        assert_eq!(
            gaussian_produce(x, 5, 0.1, 9).unwrap(),
            gaussian_produce(x, 5, 0.1, 9).unwrap()
        );
    }
}
