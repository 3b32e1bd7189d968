//! Siamese network for a learned neighbor metric.
//!
//! Both rows of a pair go through one shared tower (`d -> 32 -> 64`, ReLU).
//! During training a single sigmoid unit reads the elementwise absolute
//! difference of the two embeddings and is fit with binary cross-entropy to
//! "same pseudo-class" targets. At query time the head is dropped and rows
//! are compared by cosine similarity of their embeddings.

use std::io::{BufRead, Write};

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{self, bce_loss, glorot_bound, sigmoid, Activation, AdamState, DenseNetwork};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiameseConfig {
    pub hidden: usize,
    pub embedding: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for SiameseConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            embedding: 64,
            epochs: 10,
            batch_size: 64,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    /// 1 when both rows share a pseudo-class, else 0.
    pub target: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Draws `n_pairs / 2` same-class and `n_pairs / 2` cross-class pairs of
/// distinct rows, each uniformly (with replacement) over the valid index
/// pairs, then shuffles them.
pub fn make_pairs(labels: &[u8], n_pairs: usize, seed: u64) -> Result<PairSet> {
    if !n_pairs.is_multiple_of(2) {
        return Err(Error::invalid(format!("pair count {n_pairs} must be even")));
    }
    if n_pairs == 0 {
        return Ok(PairSet { pairs: Vec::new() });
    }
    let classes: [Vec<usize>; 2] =
        [0u8, 1].map(|c| (0..labels.len()).filter(|&i| labels[i] == c).collect());
    if classes.iter().any(Vec::is_empty) {
        return Err(Error::invalid("both pseudo-classes need at least one row"));
    }
    let ordered = |n: usize| (n * n.saturating_sub(1)) as f64;
    let same_weight = [ordered(classes[0].len()), ordered(classes[1].len())];
    if same_weight[0] + same_weight[1] == 0.0 {
        return Err(Error::invalid("no pseudo-class has two rows to pair"));
    }
    let mut rng = seed::derived_rng(seed, &[seed::STREAM_PAIRS]);
    let half = n_pairs / 2;
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..half {
        let c = if rng.random::<f64>() * (same_weight[0] + same_weight[1]) < same_weight[0] {
            0
        } else {
            1
        };
        let members = &classes[c];
        let a = rng.random_range(0..members.len());
        let mut b = rng.random_range(0..members.len() - 1);
        if b >= a {
            b += 1;
        }
        pairs.push(Pair {
            i: members[a],
            j: members[b],
            target: 1,
        });
    }
    for _ in 0..half {
        let n = classes[0][rng.random_range(0..classes[0].len())];
        let m = classes[1][rng.random_range(0..classes[1].len())];
        let (i, j) = if rng.random::<bool>() { (n, m) } else { (m, n) };
        pairs.push(Pair { i, j, target: 0 });
    }
    pairs.shuffle(&mut rng);
    Ok(PairSet { pairs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiameseModel {
    pub tower: DenseNetwork,
    pub head_weights: Vec<f64>,
    pub head_bias: f64,
    /// Mean BCE per training epoch.
    pub loss_history: Vec<f64>,
}

impl SiameseModel {
    pub fn new(tower: DenseNetwork, head_weights: Vec<f64>, head_bias: f64) -> Result<Self> {
        Error::check_dim(tower.output_dim(), head_weights.len())?;
        if !head_bias.is_finite() || head_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("siamese head"));
        }
        Ok(Self {
            tower,
            head_weights,
            head_bias,
            loss_history: Vec::new(),
        })
    }

    pub fn init(input_dim: usize, config: &SiameseConfig, seed: u64) -> Result<Self> {
        let tower = DenseNetwork::init(
            &[input_dim, config.hidden, config.embedding],
            &[Activation::Relu, Activation::Relu],
            seed,
        )?;
        let bound = glorot_bound(config.embedding, 1);
        let mut rng = seed::derived_rng(seed, &[0x4ead]);
        let head = (0..config.embedding)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self::new(tower, head, 0.0)
    }

    pub fn input_dim(&self) -> usize {
        self.tower.input_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.tower.output_dim()
    }

    pub fn n_params(&self) -> usize {
        self.tower.n_params() + self.head_weights.len() + 1
    }

    /// Tower parameters in flattening order, then head weights, then head bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.tower.params();
        p.extend_from_slice(&self.head_weights);
        p.push(self.head_bias);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        Error::check_dim(self.n_params(), params.len())?;
        let t = self.tower.n_params();
        self.tower.set_params(&params[..t])?;
        let h = self.head_weights.len();
        self.head_weights.copy_from_slice(&params[t..t + h]);
        self.head_bias = params[t + h];
        Ok(())
    }

    pub fn embed(&self, row: ArrayView1<f64>) -> Result<Vec<f64>> {
        let out = self.tower.predict(row.insert_axis(Axis(0)))?;
        Ok(out.into_raw_vec_and_offset().0)
    }

    pub fn embed_rows(&self, rows: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.tower.predict(rows)
    }

    fn head(&self, a: &[f64], b: &[f64]) -> f64 {
        let z = self.head_bias
            + a.iter()
                .zip(b)
                .zip(&self.head_weights)
                .map(|((x, y), w)| w * (x - y).abs())
                .sum::<f64>();
        sigmoid(z)
    }

    /// Training-head output `sigmoid(w . |e(x) - e(y)| + b)`, in `(0, 1)`.
    pub fn head_output(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
        Ok(self.head(&self.embed(x)?, &self.embed(y)?))
    }

    pub fn pair_outputs(&self, rows: ArrayView2<f64>, pairs: &PairSet) -> Result<Vec<f64>> {
        let emb = self.embed_rows(rows)?;
        pairs
            .pairs
            .iter()
            .map(|p| {
                check_index(p.i, rows.nrows())?;
                check_index(p.j, rows.nrows())?;
                Ok(self.head(
                    emb.row(p.i).as_slice().expect("standard layout"),
                    emb.row(p.j).as_slice().expect("standard layout"),
                ))
            })
            .collect()
    }

    pub fn pair_loss(&self, rows: ArrayView2<f64>, pairs: &PairSet) -> Result<f64> {
        let out = self.pair_outputs(rows, pairs)?;
        let targets: Vec<f64> = pairs.pairs.iter().map(|p| p.target as f64).collect();
        bce_loss(&out, &targets)
    }

    /// Gradient of the mean BCE over a batch of pairs `(left[r], right[r])`.
    /// The tower gradient is the sum of both branches' contributions.
    /// Returns the flat gradient (same order as [`params`](Self::params)) and the loss.
    pub fn gradients(
        &self,
        left: ArrayView2<f64>,
        right: ArrayView2<f64>,
        targets: &[f64],
    ) -> Result<(Vec<f64>, f64)> {
        Error::check_dim(left.nrows(), right.nrows())?;
        Error::check_dim(left.nrows(), targets.len())?;
        if targets.is_empty() {
            return Err(Error::Empty("pair batch"));
        }
        let pass_l = self.tower.forward(left)?;
        let pass_r = self.tower.forward(right)?;
        let (el, er) = (pass_l.output(), pass_r.output());
        let m = targets.len() as f64;
        let k = self.embedding_dim();
        let mut g_head = vec![0.0; k];
        let mut g_bias = 0.0;
        let mut g_el = Array2::<f64>::zeros(el.dim());
        let mut g_er = Array2::<f64>::zeros(er.dim());
        let mut outputs = Vec::with_capacity(targets.len());
        for r in 0..targets.len() {
            let a = el.row(r);
            let b = er.row(r);
            let p = self.head(a.as_slice().unwrap(), b.as_slice().unwrap());
            outputs.push(p);
            let dz = (p - targets[r]) / m;
            g_bias += dz;
            for c in 0..k {
                let diff = a[c] - b[c];
                g_head[c] += dz * diff.abs();
                let g = dz * self.head_weights[c] * sign(diff);
                g_el[[r, c]] = g;
                g_er[[r, c]] = -g;
            }
        }
        let (gl, _) = self.tower.backward(&pass_l, g_el.view())?;
        let (gr, _) = self.tower.backward(&pass_r, g_er.view())?;
        let mut grads: Vec<f64> = gl.iter().zip(&gr).map(|(x, y)| x + y).collect();
        grads.extend_from_slice(&g_head);
        grads.push(g_bias);
        Ok((grads, bce_loss(&outputs, targets)?))
    }

    fn adam_update(&mut self, adam: &mut AdamState, grads: &[f64]) -> Result<()> {
        let mut blocks = self.tower.param_slices_mut();
        blocks.push(&mut self.head_weights);
        blocks.push(std::slice::from_mut(&mut self.head_bias));
        adam.step(&mut blocks, grads)
    }

    pub fn save(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "siamese v1")?;
        neural::write_values(&mut out, "head", self.head_weights.iter())?;
        writeln!(out, "bias {:?}", self.head_bias)?;
        self.tower.write_text(out)
    }

    pub fn load(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Format("unexpected end of siamese dump".into()))?
                .map_err(|e| Error::Format(e.to_string()))
        };
        if next()?.trim() != "siamese v1" {
            return Err(Error::Format("not a siamese dump".into()));
        }
        let head_line = next()?;
        let n_head = head_line.split_whitespace().count().saturating_sub(1);
        let head = neural::read_values(&head_line, "head", n_head)?;
        let bias = neural::parse_keyed(&next()?, "bias")?;
        let tower = DenseNetwork::read_from_lines(&mut lines)?;
        Self::new(tower, head, bias)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_index(i: usize, n: usize) -> Result<()> {
    if i < n {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "pair index {i} out of range for {n} rows"
        )))
    }
}

/// Trains a freshly initialized model on `pairs` (indices into `rows`).
pub fn train_siamese(
    rows: ArrayView2<f64>,
    pairs: &PairSet,
    config: &SiameseConfig,
    seed: u64,
) -> Result<SiameseModel> {
    if pairs.is_empty() {
        return Err(Error::Empty("siamese training pairs"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    for p in &pairs.pairs {
        check_index(p.i, rows.nrows())?;
        check_index(p.j, rows.nrows())?;
    }
    let mut model = SiameseModel::init(rows.ncols(), config, seed)?;
    let mut adam = AdamState::new(model.n_params(), config.learning_rate)?;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut seed::derived_rng(seed, &[0x5eed, epoch as u64]));
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let li: Vec<usize> = chunk.iter().map(|&c| pairs.pairs[c].i).collect();
            let ri: Vec<usize> = chunk.iter().map(|&c| pairs.pairs[c].j).collect();
            let targets: Vec<f64> = chunk
                .iter()
                .map(|&c| pairs.pairs[c].target as f64)
                .collect();
            let left = rows.select(Axis(0), &li);
            let right = rows.select(Axis(0), &ri);
            let (grads, loss) = model.gradients(left.view(), right.view(), &targets)?;
            model.adam_update(&mut adam, &grads)?;
            total += loss * chunk.len() as f64;
        }
        model.loss_history.push(total / pairs.len() as f64);
    }
    Ok(model)
}

/// `sum(a_i b_i) / (|a| |b|)`; 0 when either vector has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

pub fn learned_similarity(
    model: &SiameseModel,
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
) -> Result<f64> {
    Ok(cosine_similarity(&model.embed(x)?, &model.embed(y)?))
}

#[cfg(test)]
mod tests {
    use ndarray::{array, Array1};

    use super::*;
    use crate::neural::Layer;

    #[test]
    fn pair_counts_and_balance() {
        let p = make_pairs(&[0, 0, 1, 1], 4, 0).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p.pairs.iter().filter(|q| q.target == 1).count(), 2);
        let p = make_pairs(&[0, 0, 0, 1, 0, 1, 0], 200, 3).unwrap();
        let mean = p.pairs.iter().map(|q| q.target as f64).sum::<f64>() / 200.0;
        assert_eq!(mean, 0.5);
        let labels = [0, 0, 0, 1, 0, 1, 0];
        for q in &p.pairs {
            assert_ne!(q.i, q.j);
            assert_eq!(q.target == 1, labels[q.i] == labels[q.j]);
        }
    }

    #[test]
    fn pair_errors() {
        assert!(make_pairs(&[0, 0, 0], 4, 0).is_err());
        assert!(make_pairs(&[0, 0, 1, 1], 3, 0).is_err());
        assert!(make_pairs(&[0, 1], 2, 0).is_err());
        assert_eq!(make_pairs(&[0, 1], 0, 0).unwrap().len(), 0);
    }

    #[test]
    fn pairs_deterministic() {
        let labels: Vec<u8> = (0..30).map(|i| (i % 4 == 0) as u8).collect();
        assert_eq!(
            make_pairs(&labels, 40, 9).unwrap(),
            make_pairs(&labels, 40, 9).unwrap()
        );
    }

    #[test]
    fn identical_pair_gives_sigmoid_of_bias() {
        let mut model = SiameseModel::init(3, &SiameseConfig::default(), 1).unwrap();
        model.head_bias = 0.3;
        for x in [array![0.1, 0.2, 0.3], array![5.0, -1.0, 2.0]] {
            assert_eq!(model.head_output(x.view(), x.view()).unwrap(), sigmoid(0.3));
        }
    }

    #[test]
    fn embedding_shape_and_zero_tower() {
        for d in [1, 4, 9] {
            let model = SiameseModel::init(d, &SiameseConfig::default(), 2).unwrap();
            assert_eq!(model.embed(Array1::zeros(d).view()).unwrap().len(), 64);
        }
        let zero_tower = DenseNetwork::new(vec![
            Layer::new(Array2::zeros((32, 3)), Array1::zeros(32), Activation::Relu).unwrap(),
            Layer::new(Array2::zeros((64, 32)), Array1::zeros(64), Activation::Relu).unwrap(),
        ])
        .unwrap();
        let model = SiameseModel::new(zero_tower, vec![0.1; 64], 0.0).unwrap();
        let e = model.embed(array![1.0, -2.0, 3.0].view()).unwrap();
        assert!(e.iter().all(|&v| v == 0.0));
        assert_eq!(
            learned_similarity(
                &model,
                array![1.0, 2.0, 3.0].view(),
                array![0.0, 1.0, 0.0].view()
            )
            .unwrap(),
            0.0
        );
    }

    #[test]
    fn cosine_examples() {
        let mut e1 = vec![0.0; 64];
        let mut e2 = vec![0.0; 64];
        e1[0] = 1.0;
        e2[1] = 1.0;
        assert_eq!(cosine_similarity(&e1, &e2), 0.0);
        let e: Vec<f64> = (0..64).map(|i| (i as f64).sin()).collect();
        let e2x: Vec<f64> = e.iter().map(|v| 2.0 * v).collect();
        assert!((cosine_similarity(&e, &e2x) - 1.0).abs() < 1e-15);
        assert!((cosine_similarity(&e, &e) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn self_similarity_is_one() {
        let model = SiameseModel::init(4, &SiameseConfig::default(), 5).unwrap();
        let x = array![0.3, 0.9, 0.1, 0.5];
        let e = model.embed(x.view()).unwrap();
        assert!(e.iter().any(|&v| v != 0.0));
        assert!((learned_similarity(&model, x.view(), x.view()).unwrap() - 1.0).abs() < 1e-15);
        assert!(learned_similarity(&model, x.view(), array![1.0].view()).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let model = SiameseModel::init(3, &SiameseConfig::default(), 8).unwrap();
        let mut buf = Vec::new();
        model.save(&mut buf).unwrap();
        let back = SiameseModel::load(buf.as_slice()).unwrap();
        assert_eq!(back.params(), model.params());
    }

    #[test]
    fn train_rejects_empty_pairs() {
        let rows = array![[0.0], [1.0]];
        assert!(train_siamese(
            rows.view(),
            &PairSet { pairs: vec![] },
            &SiameseConfig::default(),
            0
        )
        .is_err());
    }
}
