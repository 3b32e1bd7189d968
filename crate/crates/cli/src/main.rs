//! `ttad`: cross-validated test-time augmentation experiments on tabular
//! anomaly-detection datasets.

mod manifest;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ttad_core::data_io::{load_csv, DEFAULT_LABEL_COLUMN};
use ttad_core::eval::{
    fold_records, load_report_csv, results_table, run_methods, sweep, sweep_tables,
    write_report_csv, write_sweep_summary, Cell, EvalReport, ExperimentConfig, MethodTag,
};
use ttad_core::producers::SmoteForm;

use crate::manifest::{resolve_dataset, sha256_file, ConfigFile, Outputs, RunManifest};

/// Environment variable naming the directory bare dataset names resolve in.
const DATA_DIR_ENV: &str = "TTAD_DATA_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "ttad",
    version,
    about = "Test-time augmentation for tabular anomaly detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cross-validate one or more methods and write a report.
    Run(RunArgs),
    /// Cross-validate methods over a grid of k and T values.
    Sweep(SweepArgs),
    /// Merge report CSVs into one results table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Dataset CSV path, or a name looked up as `<name>.csv` under
    /// $TTAD_DATA_DIR (default `data`).
    #[arg(long)]
    dataset: Option<String>,
    /// Name of the 0/1 label column [default: label]
    #[arg(long)]
    label_column: Option<String>,
    /// Base seed for folds, models and augmentations [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// JSON experiment config, or a manifest written by an earlier run.
    /// Flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "reports")]
    out: PathBuf,
    /// File stem for outputs [default: derived from dataset and methods]
    #[arg(long)]
    name: Option<String>,
    /// Worker threads [default: available parallelism]
    #[arg(long)]
    jobs: Option<usize>,
    /// Also fill the `seconds` column of the report CSV (wall clock makes
    /// the file differ between runs; timings always go to `<name>.timing.csv`).
    #[arg(long)]
    timing: bool,
    /// Cross-validation folds [default: 10]
    #[arg(long)]
    folds: Option<usize>,
    /// Isolation-forest contamination for pseudo-labels [default: 0.1]
    #[arg(long)]
    contamination: Option<f64>,
    /// Gaussian-noise standard deviation for gn-tta [default: 0.1]
    #[arg(long)]
    sigma: Option<f64>,
    /// SMOTE step: `signed` (x + l(x_k - x)) or `abs` (x + l|x - x_k|) [default: signed]
    #[arg(long)]
    smote_form: Option<SmoteForm>,
    /// Autoencoder epochs [default: 300]
    #[arg(long)]
    epochs: Option<usize>,
    /// Autoencoder batch size [default: 32]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate for the autoencoder [default: 0.001]
    #[arg(long)]
    lr: Option<f64>,
    /// Isolation-forest trees [default: 200]
    #[arg(long)]
    trees: Option<usize>,
    /// Isolation-forest subsample size [default: 256]
    #[arg(long)]
    subsample: Option<usize>,
    /// Siamese epochs [default: 10]
    #[arg(long)]
    siamese_epochs: Option<usize>,
    /// Siamese batch size [default: 64]
    #[arg(long)]
    siamese_batch: Option<usize>,
    /// Siamese training pairs per fold [default: twice the rows it is fit on]
    #[arg(long)]
    pairs: Option<usize>,
    /// Fit the isolation forest and Siamese network on train and test rows
    /// (labels unused) instead of the training fold only.
    #[arg(long)]
    transductive_metric: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated methods: wo-tta, gn-tta, ttad-es, ttad-ss, ttad-ekm,
    /// ttad-skm, or the groups `all` / `all-ttad` [default: all]
    #[arg(long, alias = "methods")]
    method: Option<String>,
    /// Neighbors selected per test instance [default: 10]
    #[arg(long)]
    k: Option<usize>,
    /// Augmentations per test instance [default: 7]
    #[arg(long)]
    t: Option<usize>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated methods or groups [default: all-ttad]
    #[arg(long, alias = "method")]
    methods: Option<String>,
    /// Comma-separated k axis [default: 10,20,30,40,50]
    #[arg(long)]
    k: Option<String>,
    /// Comma-separated T axis [default: 7]
    #[arg(long)]
    t: Option<String>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Report CSVs (`dataset,method,fold,auc,seconds`).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Write the table here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A problem with the request itself rather than with running it.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let rendered = e.to_string();
            let line = rendered.lines().next().unwrap_or("invalid arguments");
            eprintln!("ttad: usage: {}", line.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let usage_error = e.downcast_ref::<UsageError>().is_some();
            let message = format!("{e:#}").replace('\n', " ");
            if usage_error {
                eprintln!("ttad: usage: {message}");
                ExitCode::from(2)
            } else {
                eprintln!("ttad: error: {message}");
                ExitCode::FAILURE
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn init_threads(jobs: Option<usize>) -> Result<()> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot start worker threads")?;
    }
    Ok(())
}

/// Flags over config file over defaults.
fn resolve_config(common: &CommonArgs, file: &ConfigFile) -> ExperimentConfig {
    let mut c = file.config.clone().unwrap_or_default();
    if let Some(v) = common.folds {
        c.folds = v;
    }
    if let Some(v) = common.contamination {
        c.contamination = v;
    }
    if let Some(v) = common.sigma {
        c.sigma = v;
    }
    if let Some(v) = common.smote_form {
        c.smote_form = v;
    }
    if let Some(v) = common.epochs {
        c.detector.epochs = v;
    }
    if let Some(v) = common.batch_size {
        c.detector.batch_size = v;
    }
    if let Some(v) = common.lr {
        c.detector.learning_rate = v;
    }
    if let Some(v) = common.trees {
        c.iforest.n_trees = v;
    }
    if let Some(v) = common.subsample {
        c.iforest.subsample_size = v;
    }
    if let Some(v) = common.siamese_epochs {
        c.siamese.epochs = v;
    }
    if let Some(v) = common.siamese_batch {
        c.siamese.batch_size = v;
    }
    if common.pairs.is_some() {
        c.pairs = common.pairs;
    }
    if common.transductive_metric {
        c.transductive_metric = true;
    }
    c
}

fn check_config(c: &ExperimentConfig) -> Result<()> {
    if c.folds < 2 {
        return Err(usage("--folds must be at least 2"));
    }
    if c.detector.epochs == 0 || c.detector.batch_size == 0 || c.siamese.batch_size == 0 {
        return Err(usage("epochs and batch sizes must be positive"));
    }
    if !(c.detector.learning_rate > 0.0 && c.detector.learning_rate.is_finite()) {
        return Err(usage("--lr must be positive"));
    }
    if c.iforest.n_trees == 0 || c.iforest.subsample_size < 2 {
        return Err(usage(
            "need at least one tree and a subsample of at least 2",
        ));
    }
    Ok(())
}

fn parse_methods(
    arg: Option<&str>,
    file: Option<&Vec<MethodTag>>,
    default: &str,
) -> Result<Vec<MethodTag>> {
    match (arg, file) {
        (Some(s), _) => MethodTag::parse_list(s).map_err(|e| usage(e.to_string())),
        (None, Some(m)) if !m.is_empty() => Ok(m.clone()),
        _ => Ok(MethodTag::parse_list(default)?),
    }
}

fn parse_axis(arg: &str, flag: &str) -> Result<Vec<usize>> {
    let values: Vec<usize> = arg
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| usage(format!("{flag}: `{s}` is not a positive integer")))
        })
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(usage(format!("{flag} axis is empty")));
    }
    let mut seen = Vec::new();
    for v in values {
        if !seen.contains(&v) {
            seen.push(v);
        }
    }
    Ok(seen)
}

fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

struct Loaded {
    file: ConfigFile,
    dataset_path: PathBuf,
    label_column: String,
    seed: u64,
}

fn load_common(common: &CommonArgs) -> Result<Loaded> {
    let file = match &common.config {
        Some(p) => ConfigFile::load(p).map_err(|e| usage(format!("{e:#}")))?,
        None => ConfigFile::default(),
    };
    let dataset = common
        .dataset
        .clone()
        .or_else(|| file.dataset.clone())
        .ok_or_else(|| usage("--dataset is required"))?;
    let dataset_path = resolve_dataset(&dataset, &data_dir()).map_err(|e| usage(e.to_string()))?;
    let label_column = common
        .label_column
        .clone()
        .or_else(|| file.label_column.clone())
        .unwrap_or_else(|| DEFAULT_LABEL_COLUMN.to_string());
    let seed = common.seed.or(file.seed).unwrap_or(0);
    Ok(Loaded {
        file,
        dataset_path,
        label_column,
        seed,
    })
}

fn default_stem(dataset: &str, methods: &[MethodTag], suffix: &str) -> String {
    let tag = if methods == MethodTag::ALL {
        "all".to_string()
    } else if methods == MethodTag::TTAD {
        "all-ttad".to_string()
    } else {
        methods
            .iter()
            .map(|m| m.as_str())
            .collect::<Vec<_>>()
            .join("+")
    };
    format!("{dataset}_{tag}{suffix}")
}

fn report_csv(reports: &[EvalReport], with_cell: bool, with_seconds: bool) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_report_csv(reports, with_cell, with_seconds, &mut buf)?;
    Ok(buf)
}

fn timing_csv(reports: &[EvalReport], with_cell: bool) -> Result<Vec<u8>> {
    report_csv(reports, with_cell, true)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let common = &args.common;
    init_threads(common.jobs)?;
    let loaded = load_common(common)?;
    let mut config = resolve_config(common, &loaded.file);
    if let Some(k) = args.k {
        config.k = k;
    }
    if let Some(t) = args.t {
        config.t = t;
    }
    check_config(&config)?;
    let methods = parse_methods(args.method.as_deref(), loaded.file.methods.as_ref(), "all")?;
    for &m in &methods {
        config
            .validate_method(m, config.k, config.t)
            .map_err(|e| usage(format!("{m}: {e}")))?;
    }
    let data = load_csv(&loaded.dataset_path, &loaded.label_column)?;
    let reports = run_methods(&data, &methods, &config, loaded.seed)?;

    let stem = common
        .name
        .clone()
        .unwrap_or_else(|| default_stem(&data.name, &methods, ""));
    let mut outputs = Outputs::default();
    let csv_path = common.out.join(format!("{stem}.csv"));
    let md_path = common.out.join(format!("{stem}.md"));
    let timing_path = common.out.join(format!("{stem}.timing.csv"));
    let manifest_path = common.out.join(format!("{stem}.manifest.json"));
    outputs.add(
        csv_path.clone(),
        report_csv(&reports, false, common.timing)?,
    );
    let table = results_table(&fold_records(&reports, false));
    let markdown = format!(
        "# {} (k={}, T={}, seed={}, {} folds)\n\n{table}",
        data.name, config.k, config.t, loaded.seed, config.folds
    );
    outputs.add(md_path, markdown.into_bytes());
    outputs.add(timing_path, timing_csv(&reports, false)?);
    let manifest = RunManifest {
        command: "run".into(),
        command_line: std::env::args().collect(),
        version: env!("CARGO_PKG_VERSION").into(),
        dataset: loaded.dataset_path.display().to_string(),
        dataset_sha256: sha256_file(&loaded.dataset_path)?,
        label_column: loaded.label_column.clone(),
        methods: methods.clone(),
        seed: loaded.seed,
        k_values: None,
        t_values: None,
        config,
        outputs: Vec::new(),
    };
    finish(outputs, manifest, manifest_path, &reports, &csv_path)
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let common = &args.common;
    init_threads(common.jobs)?;
    let loaded = load_common(common)?;
    let config = resolve_config(common, &loaded.file);
    check_config(&config)?;
    let methods = parse_methods(
        args.methods.as_deref(),
        loaded.file.methods.as_ref(),
        "all-ttad",
    )?;
    let k_values = match (&args.k, &loaded.file.k_values) {
        (Some(s), _) => parse_axis(s, "--k")?,
        (None, Some(v)) => v.clone(),
        (None, None) => vec![10, 20, 30, 40, 50],
    };
    let t_values = match (&args.t, &loaded.file.t_values) {
        (Some(s), _) => parse_axis(s, "--t")?,
        (None, Some(v)) => v.clone(),
        (None, None) => vec![7],
    };
    if k_values.is_empty() || t_values.is_empty() {
        return Err(usage("sweep axes must be nonempty"));
    }
    for &m in &methods {
        for &k in &k_values {
            for &t in &t_values {
                config
                    .validate_method(m, k, t)
                    .map_err(|e| usage(format!("{m} at k={k}, T={t}: {e}")))?;
            }
        }
    }
    let data = load_csv(&loaded.dataset_path, &loaded.label_column)?;
    let grid = sweep(&data, &methods, &k_values, &t_values, &config, loaded.seed)?;
    debug_assert_eq!(
        grid.cells(),
        k_values
            .iter()
            .flat_map(|&k| t_values.iter().map(move |&t| Cell { k, t }))
            .collect::<Vec<_>>()
    );

    let stem = common
        .name
        .clone()
        .unwrap_or_else(|| default_stem(&data.name, &methods, "_sweep"));
    let mut outputs = Outputs::default();
    let csv_path = common.out.join(format!("{stem}.csv"));
    let manifest_path = common.out.join(format!("{stem}.manifest.json"));
    outputs.add(
        csv_path.clone(),
        report_csv(&grid.reports, true, common.timing)?,
    );
    let mut summary = Vec::new();
    write_sweep_summary(&grid, &mut summary)?;
    outputs.add(common.out.join(format!("{stem}.summary.csv")), summary);
    let markdown = format!(
        "# {} sensitivity (seed={}, {} folds)\n\n{}",
        data.name,
        loaded.seed,
        config.folds,
        sweep_tables(&grid)
    );
    outputs.add(common.out.join(format!("{stem}.md")), markdown.into_bytes());
    outputs.add(
        common.out.join(format!("{stem}.timing.csv")),
        timing_csv(&grid.reports, true)?,
    );
    let manifest = RunManifest {
        command: "sweep".into(),
        command_line: std::env::args().collect(),
        version: env!("CARGO_PKG_VERSION").into(),
        dataset: loaded.dataset_path.display().to_string(),
        dataset_sha256: sha256_file(&loaded.dataset_path)?,
        label_column: loaded.label_column.clone(),
        methods,
        seed: loaded.seed,
        k_values: Some(k_values),
        t_values: Some(t_values),
        config,
        outputs: Vec::new(),
    };
    finish(outputs, manifest, manifest_path, &grid.reports, &csv_path)
}

fn finish(
    mut outputs: Outputs,
    mut manifest: RunManifest,
    manifest_path: PathBuf,
    reports: &[EvalReport],
    csv_path: &Path,
) -> Result<()> {
    manifest.outputs = outputs.paths();
    manifest.outputs.push(manifest_path.clone());
    let json = serde_json::to_vec_pretty(&manifest)?;
    outputs.add(manifest_path, json);
    outputs.commit()?;
    for r in reports {
        println!(
            "{}\t{}\tk={}\tT={}\tAUC {:.4} ± {:.4}",
            r.dataset, r.method, r.config.k, r.config.t, r.mean, r.std
        );
    }
    println!("report: {}", csv_path.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let mut records = Vec::new();
    for path in &args.inputs {
        records.extend(load_report_csv(path).map_err(|e| anyhow::anyhow!(e))?);
    }
    let table = results_table(&records);
    match &args.out {
        Some(path) => {
            let mut outputs = Outputs::default();
            outputs.add(path.clone(), table.into_bytes());
            outputs.commit()?;
        }
        None => print!("{table}"),
    }
    Ok(())
}
