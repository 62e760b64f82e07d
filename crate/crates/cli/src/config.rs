use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use dcnn::{ModelConfig, Precision, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Train/dev(/test) split.
    #[default]
    Split,
    /// k-fold cross-validation over `data`.
    MrCv,
}

/// Everything a training run depends on. Written to `<out>/config.json`;
/// passing that file back with `--config` repeats the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub dev_data: Option<PathBuf>,
    pub dev_labels: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub mode: RunMode,
    pub folds: usize,
    pub embeddings: Option<PathBuf>,
    pub random_embeddings: bool,
    pub fine_labels: bool,
    pub strict_roots: bool,
    pub min_count: usize,
    pub precision: Precision,
    pub resume: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            labels: None,
            dev_data: None,
            dev_labels: None,
            test_data: None,
            test_labels: None,
            mode: RunMode::Split,
            folds: 10,
            embeddings: None,
            random_embeddings: false,
            fine_labels: false,
            strict_roots: false,
            min_count: 1,
            precision: Precision::F64,
            resume: None,
            out: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.data.is_none() {
            bail!("no training data: pass --data");
        }
        if self.out.is_none() {
            bail!("no output directory: pass --out");
        }
        if self.mode == RunMode::MrCv && self.folds < 2 {
            bail!("--folds must be at least 2");
        }
        if self.mode == RunMode::MrCv && self.resume.is_some() {
            bail!("--resume applies to split runs only");
        }
        if self.embeddings.is_none() && !self.random_embeddings {
            bail!("no embeddings: pass --embeddings PATH or --random-embeddings");
        }
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

pub fn parse_precision(s: &str) -> Result<Precision, String> {
    match s {
        "32" => Ok(Precision::F32),
        "64" => Ok(Precision::F64),
        other => Err(format!("precision must be 32 or 64, got {other:?}")),
    }
}
