//! AUC, the cross-validated experiment runner, sensitivity sweeps, and
//! report emission.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::{stratified_kfold, Dataset, FoldSplit, Scaler};
use crate::detector::{train_detector, AutoencoderModel, DetectorConfig};
use crate::error::{Error, Result};
use crate::iforest::{build_forest, IForestConfig};
use crate::pipeline::{ttad_predict, MetricKind, Producer, TtadConfig};
use crate::producers::SmoteForm;
use crate::seed;
use crate::selector::{Metric, NeighborIndex};
use crate::siamese::{make_pairs, train_siamese, SiameseConfig};

/// Area under the ROC curve as the Mann-Whitney statistic computed from
/// mid-ranks: `(#(anomaly > normal) + 0.5 #ties) / (n1 n0)`.
pub fn roc_auc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::invalid(format!(
            "{} labels for {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }
    let n1 = labels.iter().filter(|&&l| l == 1).count();
    let n0 = labels.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::invalid("AUC needs both classes present"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of (doubled) mid-ranks of the anomalies; doubling keeps every
    // quantity an integer until the final division.
    let mut doubled_rank_sum = 0u128;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks start..end (0-based) share the 1-based mid-rank (start + 1 + end) / 2.
        let doubled_mid = (start + 1 + end) as u128;
        let positives = order[start..end]
            .iter()
            .filter(|&&i| labels[i] == 1)
            .count() as u128;
        doubled_rank_sum += doubled_mid * positives;
        start = end;
    }
    let n1w = n1 as u128;
    let doubled_u = doubled_rank_sum - n1w * (n1w + 1);
    Ok(doubled_u as f64 / 2.0 / (n1 as f64 * n0 as f64))
}

/// Rows of the results table: the plain detector, Gaussian-noise TTA, and
/// the four TTAD variants (Euclidean/learned selector x SMOTE/k-Means producer).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MethodTag {
    #[serde(rename = "wo-tta")]
    WoTta,
    #[serde(rename = "gn-tta")]
    GnTta,
    #[serde(rename = "ttad-es")]
    TtadEs,
    #[serde(rename = "ttad-ss")]
    TtadSs,
    #[serde(rename = "ttad-ekm")]
    TtadEkm,
    #[serde(rename = "ttad-skm")]
    TtadSkm,
}

impl MethodTag {
    pub const ALL: [MethodTag; 6] = [
        MethodTag::WoTta,
        MethodTag::GnTta,
        MethodTag::TtadEs,
        MethodTag::TtadSs,
        MethodTag::TtadEkm,
        MethodTag::TtadSkm,
    ];

    pub const TTAD: [MethodTag; 4] = [
        MethodTag::TtadEs,
        MethodTag::TtadSs,
        MethodTag::TtadEkm,
        MethodTag::TtadSkm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodTag::WoTta => "wo-tta",
            MethodTag::GnTta => "gn-tta",
            MethodTag::TtadEs => "ttad-es",
            MethodTag::TtadSs => "ttad-ss",
            MethodTag::TtadEkm => "ttad-ekm",
            MethodTag::TtadSkm => "ttad-skm",
        }
    }

    /// Display name used in markdown tables.
    pub fn label(self) -> &'static str {
        match self {
            MethodTag::WoTta => "w/o TTA",
            MethodTag::GnTta => "GN-TTA",
            MethodTag::TtadEs => "TTAD-ES",
            MethodTag::TtadSs => "TTAD-SS",
            MethodTag::TtadEkm => "TTAD-EkM",
            MethodTag::TtadSkm => "TTAD-SkM",
        }
    }

    pub fn metric(self) -> MetricKind {
        match self {
            MethodTag::TtadSs | MethodTag::TtadSkm => MetricKind::Learned,
            _ => MetricKind::Euclidean,
        }
    }

    pub fn producer(self) -> Producer {
        match self {
            MethodTag::WoTta => Producer::None,
            MethodTag::GnTta => Producer::Gaussian,
            MethodTag::TtadEs | MethodTag::TtadSs => Producer::Smote,
            MethodTag::TtadEkm | MethodTag::TtadSkm => Producer::Kmeans,
        }
    }

    /// Parses a comma-separated list; `all` and `all-ttad` expand to groups.
    pub fn parse_list(s: &str) -> Result<Vec<MethodTag>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let group: Vec<MethodTag> = match part {
                "all" => MethodTag::ALL.to_vec(),
                "all-ttad" => MethodTag::TTAD.to_vec(),
                tag => vec![tag.parse()?],
            };
            for m in group {
                if !out.contains(&m) {
                    out.push(m);
                }
            }
        }
        if out.is_empty() {
            return Err(Error::invalid("no methods given"));
        }
        Ok(out)
    }
}

impl fmt::Display for MethodTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodTag::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown method `{s}` (expected one of wo-tta, gn-tta, ttad-es, ttad-ss, ttad-ekm, ttad-skm)"
                ))
            })
    }
}

/// Everything that determines a cross-validated run besides the dataset,
/// the method and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub folds: usize,
    pub k: usize,
    pub t: usize,
    pub contamination: f64,
    pub sigma: f64,
    pub smote_form: SmoteForm,
    pub detector: DetectorConfig,
    pub iforest: IForestConfig,
    pub siamese: SiameseConfig,
    /// Siamese training pairs per fold; `None` means twice the number of rows
    /// the metric is fit on.
    pub pairs: Option<usize>,
    /// Fit the isolation forest and Siamese network on all rows (train and
    /// test, labels unused) instead of the training fold only.
    pub transductive_metric: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            k: 10,
            t: 7,
            contamination: 0.1,
            sigma: 0.1,
            smote_form: SmoteForm::Signed,
            detector: DetectorConfig::default(),
            iforest: IForestConfig::default(),
            siamese: SiameseConfig::default(),
            pairs: None,
            transductive_metric: false,
        }
    }
}

impl ExperimentConfig {
    /// Pipeline configuration for one method in one fold.
    pub fn ttad_config(&self, method: MethodTag, k: usize, t: usize, seed: u64) -> TtadConfig {
        TtadConfig {
            k,
            t,
            producer: method.producer(),
            metric: method.metric(),
            contamination: self.contamination,
            seed,
            sigma: self.sigma,
            smote_form: self.smote_form,
        }
    }

    pub fn validate_method(&self, method: MethodTag, k: usize, t: usize) -> Result<()> {
        self.ttad_config(method, k, t, 0).validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub method: MethodTag,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub fold_aucs: Vec<f64>,
    /// Wall clock per fold: shared model fitting plus this method's scoring.
    pub fold_seconds: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl EvalReport {
    fn new(
        dataset: &str,
        method: MethodTag,
        config: ExperimentConfig,
        seed: u64,
        fold_aucs: Vec<f64>,
        fold_seconds: Vec<f64>,
    ) -> Self {
        let (mean, std) = mean_std(&fold_aucs);
        Self {
            dataset: dataset.to_string(),
            method,
            config,
            seed,
            fold_aucs,
            fold_seconds,
            mean,
            std,
        }
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Models shared by every method scored in one fold.
struct FoldContext {
    split: FoldSplit,
    scaled: Array2<f64>,
    detector: AutoencoderModel,
    euclidean: NeighborIndex,
    learned: Option<NeighborIndex>,
    base_seconds: f64,
    learned_seconds: f64,
}

fn prepare_fold(
    data: &Dataset,
    split: FoldSplit,
    config: &ExperimentConfig,
    needs_learned: bool,
    run_seed: u64,
) -> Result<FoldContext> {
    let start = Instant::now();
    let fold = split.fold_index as u64;
    let scaler = Scaler::fit(data, &split.train_indices)?;
    let scaled = scaler.transform(data.features.view())?;
    let normals: Vec<usize> = split
        .train_indices
        .iter()
        .copied()
        .filter(|&i| data.labels[i] == 0)
        .collect();
    let detector = train_detector(
        scaled.select(Axis(0), &normals).view(),
        &config.detector,
        seed::derive(run_seed, &[seed::STREAM_DETECTOR, fold]),
    )?;
    let euclidean = NeighborIndex::build(scaled.clone(), Metric::Euclidean)?;
    let base_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let learned = if needs_learned {
        let fit_rows = if config.transductive_metric {
            scaled.clone()
        } else {
            scaled.select(Axis(0), &split.train_indices)
        };
        let forest = build_forest(
            fit_rows.view(),
            &config.iforest,
            seed::derive(run_seed, &[seed::STREAM_FOREST, fold]),
        )?;
        let pseudo = forest.pseudo_label(fit_rows.view(), config.contamination)?;
        let n_pairs = config.pairs.unwrap_or(2 * fit_rows.nrows());
        let n_pairs = n_pairs + n_pairs % 2;
        let pairs = make_pairs(
            &pseudo,
            n_pairs,
            seed::derive(run_seed, &[seed::STREAM_PAIRS, fold]),
        )?;
        let siamese = train_siamese(
            fit_rows.view(),
            &pairs,
            &config.siamese,
            seed::derive(run_seed, &[seed::STREAM_SIAMESE, fold]),
        )?;
        Some(NeighborIndex::build(
            scaled.clone(),
            Metric::Learned(Arc::new(siamese)),
        )?)
    } else {
        None
    };
    Ok(FoldContext {
        split,
        scaled,
        detector,
        euclidean,
        learned,
        base_seconds,
        learned_seconds: start.elapsed().as_secs_f64(),
    })
}

/// One (k, T) setting of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub k: usize,
    pub t: usize,
}

fn score_fold(
    data: &Dataset,
    ctx: &FoldContext,
    config: &ExperimentConfig,
    method: MethodTag,
    cell: Cell,
    run_seed: u64,
) -> Result<(f64, f64)> {
    let start = Instant::now();
    let fold_seed = seed::derive(
        run_seed,
        &[seed::STREAM_AUGMENT, ctx.split.fold_index as u64],
    );
    let ttad = config.ttad_config(method, cell.k, cell.t, fold_seed);
    let index = match method.metric() {
        MetricKind::Euclidean => &ctx.euclidean,
        MetricKind::Learned => ctx
            .learned
            .as_ref()
            .ok_or_else(|| Error::invalid("learned metric was not prepared"))?,
    };
    let test = &ctx.split.test_indices;
    let rows = ctx.scaled.select(Axis(0), test);
    let scored = ttad_predict(&ttad, &ctx.detector, index, rows.view(), test)?;
    let scores: Vec<f64> = scored.iter().map(|s| s.aggregated).collect();
    let labels: Vec<u8> = test.iter().map(|&i| data.labels[i]).collect();
    let auc = roc_auc(&labels, &scores)?;
    let mut seconds = ctx.base_seconds + start.elapsed().as_secs_f64();
    if method.metric() == MetricKind::Learned {
        seconds += ctx.learned_seconds;
    }
    Ok((auc, seconds))
}

/// Cross-validates every (method, cell) combination, fitting the
/// per-fold models once and sharing them across combinations.
///
/// Reports come back ordered by method, then by cell, as given.
pub fn run_grid(
    data: &Dataset,
    methods: &[MethodTag],
    cells: &[Cell],
    config: &ExperimentConfig,
    run_seed: u64,
) -> Result<Vec<EvalReport>> {
    if methods.is_empty() || cells.is_empty() {
        return Err(Error::invalid(
            "need at least one method and one (k, T) cell",
        ));
    }
    for &m in methods {
        for c in cells {
            config.validate_method(m, c.k, c.t)?;
            if m.producer().uses_neighbors() && c.k >= data.n_samples() {
                return Err(Error::invalid(format!(
                    "k = {} needs more than {} rows",
                    c.k,
                    data.n_samples()
                )));
            }
        }
    }
    let needs_learned = methods.iter().any(|m| m.metric() == MetricKind::Learned);
    let splits = stratified_kfold(
        &data.labels,
        config.folds,
        seed::derive(run_seed, &[seed::STREAM_FOLDS]),
    )?;
    // results[fold][method][cell] = (auc, seconds)
    let results: Vec<Vec<Vec<(f64, f64)>>> = splits
        .into_par_iter()
        .map(|split| {
            let ctx = prepare_fold(data, split, config, needs_learned, run_seed)?;
            methods
                .iter()
                .map(|&m| {
                    cells
                        .iter()
                        .map(|&c| score_fold(data, &ctx, config, m, c, run_seed))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut reports = Vec::with_capacity(methods.len() * cells.len());
    for (mi, &m) in methods.iter().enumerate() {
        for (ci, &c) in cells.iter().enumerate() {
            let aucs = results.iter().map(|f| f[mi][ci].0).collect();
            let secs = results.iter().map(|f| f[mi][ci].1).collect();
            let cfg = ExperimentConfig {
                k: c.k,
                t: c.t,
                ..config.clone()
            };
            reports.push(EvalReport::new(&data.name, m, cfg, run_seed, aucs, secs));
        }
    }
    Ok(reports)
}

/// Cross-validates several methods at the configured (k, T).
pub fn run_methods(
    data: &Dataset,
    methods: &[MethodTag],
    config: &ExperimentConfig,
    run_seed: u64,
) -> Result<Vec<EvalReport>> {
    run_grid(
        data,
        methods,
        &[Cell {
            k: config.k,
            t: config.t,
        }],
        config,
        run_seed,
    )
}

/// Cross-validates one method.
pub fn run_cv(
    data: &Dataset,
    method: MethodTag,
    config: &ExperimentConfig,
    run_seed: u64,
) -> Result<EvalReport> {
    Ok(run_methods(data, &[method], config, run_seed)?.remove(0))
}

/// Reports over the product of methods, k values and T values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub dataset: String,
    pub methods: Vec<MethodTag>,
    pub k_values: Vec<usize>,
    pub t_values: Vec<usize>,
    /// Ordered by method, then k, then T.
    pub reports: Vec<EvalReport>,
}

impl SweepGrid {
    pub fn get(&self, method: MethodTag, k: usize, t: usize) -> Option<&EvalReport> {
        let mi = self.methods.iter().position(|&m| m == method)?;
        let ki = self.k_values.iter().position(|&v| v == k)?;
        let ti = self.t_values.iter().position(|&v| v == t)?;
        self.reports
            .get((mi * self.k_values.len() + ki) * self.t_values.len() + ti)
    }

    pub fn cells(&self) -> Vec<Cell> {
        grid_cells(&self.k_values, &self.t_values)
    }
}

fn grid_cells(k_values: &[usize], t_values: &[usize]) -> Vec<Cell> {
    k_values
        .iter()
        .flat_map(|&k| t_values.iter().map(move |&t| Cell { k, t }))
        .collect()
}

pub fn sweep(
    data: &Dataset,
    methods: &[MethodTag],
    k_values: &[usize],
    t_values: &[usize],
    config: &ExperimentConfig,
    run_seed: u64,
) -> Result<SweepGrid> {
    if k_values.is_empty() || t_values.is_empty() {
        return Err(Error::invalid("sweep axes must be nonempty"));
    }
    let reports = run_grid(
        data,
        methods,
        &grid_cells(k_values, t_values),
        config,
        run_seed,
    )?;
    Ok(SweepGrid {
        dataset: data.name.clone(),
        methods: methods.to_vec(),
        k_values: k_values.to_vec(),
        t_values: t_values.to_vec(),
        reports,
    })
}

pub const REPORT_HEADER: [&str; 5] = ["dataset", "method", "fold", "auc", "seconds"];

/// One line of a report CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub dataset: String,
    pub method: String,
    pub fold: usize,
    pub auc: f64,
    pub seconds: Option<f64>,
}

/// Method column of a report row. Sweep rows carry their cell, e.g.
/// `ttad-skm[k=20;t=7]`, so every row of a grid stays distinguishable.
pub fn method_column(report: &EvalReport, with_cell: bool) -> String {
    if with_cell {
        format!(
            "{}[k={};t={}]",
            report.method, report.config.k, report.config.t
        )
    } else {
        report.method.to_string()
    }
}

/// Writes `dataset,method,fold,auc,seconds`, one row per fold. `seconds` is
/// left empty unless `with_seconds`, keeping the file byte-reproducible.
pub fn write_report_csv(
    reports: &[EvalReport],
    with_cell: bool,
    with_seconds: bool,
    out: impl Write,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(REPORT_HEADER).map_err(csv_err)?;
    for r in reports {
        let method = method_column(r, with_cell);
        for (fold, (auc, secs)) in r.fold_aucs.iter().zip(&r.fold_seconds).enumerate() {
            let seconds = if with_seconds {
                format!("{secs:.3}")
            } else {
                String::new()
            };
            w.write_record([
                r.dataset.as_str(),
                method.as_str(),
                &fold.to_string(),
                &auc.to_string(),
                &seconds,
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

/// Parses a report CSV written by [`write_report_csv`]. `source` names the
/// input in error messages.
pub fn read_report_csv(input: impl Read, source: &str) -> Result<Vec<FoldRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let bad = |msg: String| Error::Format(format!("{source}: {msg}"));
    let header = r.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().ne(REPORT_HEADER) {
        return Err(bad(format!(
            "expected header `{}`, found `{}`",
            REPORT_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let row = line + 2;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let fold = field(2)
            .parse()
            .map_err(|_| bad(format!("line {row}: bad fold `{}`", field(2))))?;
        let auc: f64 = field(3)
            .parse()
            .map_err(|_| bad(format!("line {row}: bad auc `{}`", field(3))))?;
        if !(0.0..=1.0).contains(&auc) {
            return Err(bad(format!("line {row}: auc {auc} outside [0, 1]")));
        }
        let seconds = match field(4) {
            "" => None,
            s => Some(
                s.parse()
                    .map_err(|_| bad(format!("line {row}: bad seconds `{s}`")))?,
            ),
        };
        out.push(FoldRecord {
            dataset: field(0).to_string(),
            method: field(1).to_string(),
            fold,
            auc,
            seconds,
        });
    }
    Ok(out)
}

fn cell_text(mean: f64, std: f64) -> String {
    format!("{mean:.3}±{std:.3}")
}

fn method_sort_key(method: &str) -> (usize, String) {
    let base = method.split('[').next().unwrap_or(method);
    let rank = MethodTag::ALL
        .iter()
        .position(|m| m.as_str() == base)
        .unwrap_or(MethodTag::ALL.len());
    (rank, method.to_string())
}

fn method_label(method: &str) -> String {
    let (base, rest) = match method.find('[') {
        Some(i) => method.split_at(i),
        None => (method, ""),
    };
    match base.parse::<MethodTag>() {
        Ok(m) => format!("{}{rest}", m.label()),
        Err(_) => method.to_string(),
    }
}

/// Results table with methods as rows, datasets as columns and
/// `mean±std` cells; combinations without data are left blank.
pub fn results_table(records: &[FoldRecord]) -> String {
    let mut datasets: Vec<String> = Vec::new();
    let mut groups: BTreeMap<(usize, String), BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for r in records {
        if !datasets.contains(&r.dataset) {
            datasets.push(r.dataset.clone());
        }
        groups
            .entry(method_sort_key(&r.method))
            .or_default()
            .entry(r.dataset.clone())
            .or_default()
            .push(r.auc);
    }
    let mut out = String::from("| Method |");
    for d in &datasets {
        out.push_str(&format!(" {d} |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(datasets.len()));
    out.push('\n');
    for ((_, method), by_dataset) in &groups {
        out.push_str(&format!("| {} |", method_label(method)));
        for d in &datasets {
            match by_dataset.get(d) {
                Some(aucs) => {
                    let (m, s) = mean_std(aucs);
                    out.push_str(&format!(" {} |", cell_text(m, s)));
                }
                None => out.push_str(" |"),
            }
        }
        out.push('\n');
    }
    out
}

/// Fold records of a set of reports, for [`results_table`].
pub fn fold_records(reports: &[EvalReport], with_cell: bool) -> Vec<FoldRecord> {
    reports
        .iter()
        .flat_map(|r| {
            let method = method_column(r, with_cell);
            r.fold_aucs
                .iter()
                .zip(&r.fold_seconds)
                .enumerate()
                .map(move |(fold, (&auc, &secs))| FoldRecord {
                    dataset: r.dataset.clone(),
                    method: method.clone(),
                    fold,
                    auc,
                    seconds: Some(secs),
                })
        })
        .collect()
}

/// Sensitivity tables: one table per T value with k as columns when the k
/// axis varies (or a single T), otherwise one table per k with T as columns.
/// Rows are methods, cells `mean±std`.
pub fn sweep_tables(grid: &SweepGrid) -> String {
    let mut out = String::new();
    let by_k = grid.k_values.len() > 1 || grid.t_values.len() == 1;
    let (fixed_name, fixed_values, axis_name, axis_values) = if by_k {
        ("T", &grid.t_values, "k", &grid.k_values)
    } else {
        ("k", &grid.k_values, "T", &grid.t_values)
    };
    for &fixed in fixed_values.iter() {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&format!("{} with {fixed_name}={fixed}\n\n", grid.dataset));
        out.push_str("| Method |");
        for v in axis_values.iter() {
            out.push_str(&format!(" {axis_name}={v} |"));
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(axis_values.len()));
        out.push('\n');
        for &m in &grid.methods {
            out.push_str(&format!("| {} |", m.label()));
            for &v in axis_values.iter() {
                let (k, t) = if by_k { (v, fixed) } else { (fixed, v) };
                match grid.get(m, k, t) {
                    Some(r) => out.push_str(&format!(" {} |", cell_text(r.mean, r.std))),
                    None => out.push_str(" |"),
                }
            }
            out.push('\n');
        }
    }
    out
}

/// One row per (method, k, T): `dataset,method,k,t,mean,std`.
pub fn write_sweep_summary(grid: &SweepGrid, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["dataset", "method", "k", "t", "mean", "std"])
        .map_err(csv_err)?;
    for r in &grid.reports {
        w.write_record([
            r.dataset.as_str(),
            r.method.as_str(),
            &r.config.k.to_string(),
            &r.config.t.to_string(),
            &r.mean.to_string(),
            &r.std.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

/// Reads a report CSV from disk.
pub fn load_report_csv(path: &Path) -> Result<Vec<FoldRecord>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_report_csv(file, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::fixtures::cluster_with_outliers;

    fn pairwise(labels: &[u8], scores: &[f64]) -> f64 {
        let mut wins = 0.0;
        let mut total = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == 1 && lj == 0 {
                    total += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / total
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0, 0, 1, 1], &[0.1, 0.2, 0.3, 0.4]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0, 1, 0, 1], &[0.5; 4]).unwrap(), 0.5);
        assert_eq!(
            roc_auc(&[0, 0, 1, 1], &[0.1, 0.4, 0.35, 0.8]).unwrap(),
            0.75
        );
        assert_eq!(roc_auc(&[0, 0, 1, 1], &[0.4, 0.3, 0.2, 0.1]).unwrap(), 0.0);
    }

    #[test]
    fn auc_matches_pairwise_with_ties() {
        let labels = [1, 0, 1, 0, 0, 1, 0];
        let scores = [0.3, 0.3, 0.1, 0.9, 0.3, 0.9, 0.0];
        assert_eq!(
            roc_auc(&labels, &scores).unwrap(),
            pairwise(&labels, &scores)
        );
    }

    #[test]
    fn auc_errors() {
        assert!(roc_auc(&[0, 0], &[0.1, 0.2]).is_err());
        assert!(roc_auc(&[0, 1], &[0.1]).is_err());
        assert!(roc_auc(&[0, 1], &[0.1, f64::NAN]).is_err());
        assert!(roc_auc(&[0, 2], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn method_mapping() {
        assert_eq!(MethodTag::TtadSkm.metric(), MetricKind::Learned);
        assert_eq!(MethodTag::TtadSkm.producer(), Producer::Kmeans);
        assert_eq!(MethodTag::TtadEs.metric(), MetricKind::Euclidean);
        assert_eq!(MethodTag::TtadEs.producer(), Producer::Smote);
        assert_eq!(MethodTag::WoTta.producer(), Producer::None);
        assert_eq!(MethodTag::GnTta.producer(), Producer::Gaussian);
        for m in MethodTag::ALL {
            assert_eq!(m.as_str().parse::<MethodTag>().unwrap(), m);
        }
        assert_eq!(
            MethodTag::parse_list("all-ttad").unwrap(),
            MethodTag::TTAD.to_vec()
        );
        assert_eq!(MethodTag::parse_list("wo-tta,all").unwrap().len(), 6);
        assert!(MethodTag::parse_list("").is_err());
        assert!(MethodTag::parse_list("ttad-xx").is_err());
    }

    #[test]
    fn mean_std_population() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
    }

    fn quick_config() -> ExperimentConfig {
        ExperimentConfig {
            folds: 3,
            k: 5,
            t: 3,
            detector: DetectorConfig {
                hidden: 8,
                latent: 2,
                epochs: 30,
                ..DetectorConfig::default()
            },
            iforest: IForestConfig {
                n_trees: 20,
                subsample_size: 64,
            },
            siamese: SiameseConfig {
                epochs: 2,
                ..SiameseConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn cv_on_synthetic_data() {
        let data = cluster_with_outliers(120, 12, 3, 8.0, 1);
        let reports = run_methods(&data, &MethodTag::ALL, &quick_config(), 2).unwrap();
        assert_eq!(reports.len(), 6);
        for r in &reports {
            assert_eq!(r.fold_aucs.len(), 3);
            let (m, s) = mean_std(&r.fold_aucs);
            assert!((m - r.mean).abs() < 1e-12 && (s - r.std).abs() < 1e-12);
            assert!(r.fold_aucs.iter().all(|a| (0.0..=1.0).contains(a)));
        }
        assert!(reports[0].mean > 0.95, "{}", reports[0].mean);
        let again = run_cv(&data, MethodTag::TtadSkm, &quick_config(), 2).unwrap();
        assert_eq!(again.fold_aucs, reports[5].fold_aucs);
    }

    #[test]
    fn sweep_shape_and_rejection() {
        let data = cluster_with_outliers(60, 6, 2, 8.0, 3);
        let cfg = ExperimentConfig {
            folds: 2,
            ..quick_config()
        };
        let grid = sweep(&data, &[MethodTag::TtadEs], &[4, 6], &[2, 3], &cfg, 0).unwrap();
        assert_eq!(grid.reports.len(), 4);
        assert_eq!(grid.get(MethodTag::TtadEs, 6, 2).unwrap().config.k, 6);
        assert_eq!(grid.get(MethodTag::TtadEs, 6, 2).unwrap().config.t, 2);
        assert!(sweep(&data, &[MethodTag::TtadEkm], &[4], &[7], &cfg, 0).is_err());
        assert!(sweep(&data, &[MethodTag::TtadEs], &[], &[7], &cfg, 0).is_err());
        let tables = sweep_tables(&grid);
        assert!(tables.contains("| TTAD-ES |"));
    }

    #[test]
    fn report_csv_round_trip_and_table() {
        let cfg = ExperimentConfig::default();
        let a = EvalReport::new(
            "cardio",
            MethodTag::WoTta,
            cfg.clone(),
            1,
            vec![0.9, 0.8],
            vec![1.0, 2.0],
        );
        let b = EvalReport::new(
            "thyroid",
            MethodTag::TtadSkm,
            cfg,
            1,
            vec![0.7, 0.9],
            vec![1.0, 2.0],
        );
        let mut buf = Vec::new();
        write_report_csv(&[a, b], false, false, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("dataset,method,fold,auc,seconds\n"));
        assert!(text.contains("cardio,wo-tta,0,0.9,\n"));
        let records = read_report_csv(buf.as_slice(), "mem").unwrap();
        assert_eq!(records.len(), 4);
        let table = results_table(&records);
        assert!(table.starts_with("| Method | cardio | thyroid |"));
        assert!(table.contains("| w/o TTA | 0.850±0.050 | |"));
        assert!(table.contains("| TTAD-SkM | | 0.800±0.100 |"));
        assert!(read_report_csv("a,b\n1,2\n".as_bytes(), "bad.csv")
            .unwrap_err()
            .to_string()
            .contains("bad.csv"));
    }
}
