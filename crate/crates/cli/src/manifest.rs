//! Run manifests, config files, and all-or-nothing output writing.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ttad_core::eval::{ExperimentConfig, MethodTag};

/// Written next to every report; enough to rerun it with `--config`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub command_line: Vec<String>,
    pub version: String,
    pub dataset: String,
    pub dataset_sha256: String,
    pub label_column: String,
    pub methods: Vec<MethodTag>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_values: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_values: Option<Vec<usize>>,
    pub config: ExperimentConfig,
    pub outputs: Vec<PathBuf>,
}

/// Settings read from `--config`: either a bare experiment config or a
/// manifest, whose dataset, methods, seed and axes also become defaults.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    pub config: Option<ExperimentConfig>,
    pub dataset: Option<String>,
    pub label_column: Option<String>,
    pub methods: Option<Vec<MethodTag>>,
    pub seed: Option<u64>,
    pub k_values: Option<Vec<usize>>,
    pub t_values: Option<Vec<usize>>,
}

#[derive(Deserialize)]
struct ManifestLike {
    config: ExperimentConfig,
    dataset: Option<String>,
    label_column: Option<String>,
    methods: Option<Vec<MethodTag>>,
    seed: Option<u64>,
    k_values: Option<Vec<usize>>,
    t_values: Option<Vec<usize>>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("config {} is not valid JSON", path.display()))?;
        let bad = || format!("config {} has an unexpected shape", path.display());
        if value.get("config").is_some() {
            let m: ManifestLike = serde_json::from_value(value).with_context(bad)?;
            Ok(Self {
                config: Some(m.config),
                dataset: m.dataset,
                label_column: m.label_column,
                methods: m.methods,
                seed: m.seed,
                k_values: m.k_values,
                t_values: m.t_values,
            })
        } else {
            let config: ExperimentConfig = serde_json::from_value(value).with_context(bad)?;
            Ok(Self {
                config: Some(config),
                ..Self::default()
            })
        }
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Collects output files and writes them together: each goes to a temporary
/// sibling first, and nothing is left behind if any step fails.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, path: PathBuf, contents: Vec<u8>) {
        self.files.push((path, contents));
    }

    pub fn paths(&self) -> Vec<PathBuf> {
        self.files.iter().map(|(p, _)| p.clone()).collect()
    }

    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let mut staged: Vec<(PathBuf, PathBuf)> = Vec::new();
        let mut renamed: Vec<PathBuf> = Vec::new();
        let result = (|| -> Result<()> {
            for (path, contents) in &self.files {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir)
                        .with_context(|| format!("cannot create {}", dir.display()))?;
                }
                let tmp = tmp_path(path);
                staged.push((tmp.clone(), path.clone()));
                fs::write(&tmp, contents)
                    .with_context(|| format!("cannot write {}", path.display()))?;
            }
            for (tmp, path) in &staged {
                fs::rename(tmp, path)
                    .with_context(|| format!("cannot write {}", path.display()))?;
                renamed.push(path.clone());
            }
            Ok(())
        })();
        if let Err(e) = result {
            for (tmp, _) in &staged {
                let _ = fs::remove_file(tmp);
            }
            for path in &renamed {
                let _ = fs::remove_file(path);
            }
            return Err(e);
        }
        Ok(self.files.into_iter().map(|(p, _)| p).collect())
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

/// Resolves `--dataset`: an existing path, or a bare name looked up as
/// `<name>.csv` in the data directory.
pub fn resolve_dataset(arg: &str, data_dir: &Path) -> Result<PathBuf> {
    let direct = PathBuf::from(arg);
    if direct.is_file() {
        return Ok(direct);
    }
    let named = data_dir.join(if arg.ends_with(".csv") {
        arg.to_string()
    } else {
        format!("{arg}.csv")
    });
    if named.is_file() {
        return Ok(named);
    }
    bail!(
        "dataset `{arg}` not found (also looked for {})",
        named.display()
    )
}
