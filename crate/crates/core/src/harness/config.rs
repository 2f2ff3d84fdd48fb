use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{LmConfig, TrainConfig};
use crate::scoring::Strategy;
use crate::synthetic::SyntheticConfig;

/// Network shape shared by every model of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub dim: usize,
    pub layers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ff_dim: Option<usize>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            dim: 64,
            layers: 2,
            heads: None,
            ff_dim: None,
        }
    }
}

impl ModelSpec {
    pub fn lm_config(&self, vocab_size: usize, context_window: usize, seed: u64) -> LmConfig {
        let mut cfg = LmConfig::new(vocab_size, self.dim, self.layers, context_window, seed);
        if let Some(h) = self.heads {
            cfg.num_heads = h;
        }
        if let Some(f) = self.ff_dim {
            cfg.ff_dim = f;
        }
        cfg
    }
}

/// Optimizer budget shared by every model of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_clip")]
    pub clip_norm: Option<f64>,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.99
}
fn default_clip() -> Option<f64> {
    Some(1.0)
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            steps: 1500,
            batch_size: 16,
            learning_rate: 3e-3,
            beta1: default_beta1(),
            beta2: default_beta2(),
            clip_norm: default_clip(),
        }
    }
}

impl TrainSpec {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            beta1: self.beta1,
            beta2: self.beta2,
            clip_norm: self.clip_norm,
        }
    }
}

fn default_k() -> f64 {
    8.0
}
fn default_min_count() -> usize {
    1
}
fn default_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}
fn default_sweep() -> Vec<usize> {
    vec![0, 1, 3, 7, 14]
}

/// One experiment: data, context budget, strategies, models and seeds.
///
/// The corpus comes either from `train`/`test` text files (one tokenized
/// sentence per line) or from the `synthetic` generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    /// Longest sentence kept, in words; defaults to the longest training sentence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
    /// Use only the first `subset` training sentences.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<usize>,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Context sizes for the sweep.
    #[serde(default = "default_sweep")]
    pub sweep: Vec<usize>,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub training: TrainSpec,
    /// Artifacts are written here and reused on rerun when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train: None,
            test: None,
            synthetic: Some(SyntheticConfig::default()),
            max_len: None,
            subset: None,
            min_count: default_min_count(),
            k: default_k(),
            strategies: default_strategies(),
            seeds: default_seeds(),
            sweep: default_sweep(),
            model: ModelSpec::default(),
            training: TrainSpec::default(),
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.k > 0.0) {
            return bad("k must be positive");
        }
        if self.strategies.is_empty() {
            return bad("at least one strategy is required");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        match (&self.train, &self.test, &self.synthetic) {
            (Some(_), Some(_), None) | (None, None, Some(_)) => {}
            _ => return bad("give either both train and test paths or a synthetic section"),
        }
        if self.max_len == Some(0) || self.subset == Some(0) {
            return bad("max_len and subset must be positive");
        }
        if self.training.steps == 0 || self.training.batch_size == 0 || !(self.training.learning_rate > 0.0) {
            return bad("training needs positive steps, batch_size and learning_rate");
        }
        Ok(())
    }

    /// Reads a TOML file; relative corpus and output paths resolve against
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.train, &mut cfg.test, &mut cfg.out_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}
