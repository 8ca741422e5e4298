use crate::error::{Error, Result};
use crate::model::{ManifoldSpec, ModelSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Node classification, scored by micro F1.
    Nc,
    /// Link prediction, scored by ROC AUC.
    Lp,
    /// SPD matrix classification, scored by micro F1.
    SpdClassify,
}

impl Task {
    pub fn metric(self) -> &'static str {
        match self {
            Task::Lp => "roc_auc",
            Task::Nc | Task::SpdClassify => "f1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Generated SIR tree.
    Sir,
    /// Generated edgeless Gaussian blobs.
    Blobs,
    /// Graph dataset directory at `path`.
    GraphDir,
    /// Generated covariance matrices.
    SpdSynthetic,
    /// SPD dataset directory at `path`.
    SpdDir,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    pub path: Option<PathBuf>,
    /// Seed of the data generators; run seeds only affect splits and models.
    pub seed: u64,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    // SIR trees
    pub nodes: usize,
    pub branching: usize,
    pub infection_prob: f64,
    // blobs and synthetic SPD data
    pub samples: usize,
    pub dim: usize,
    pub classes: usize,
    pub separation: f64,
    // synthetic SPD data only
    pub frames: usize,
    pub noise: f64,
    pub scale_spread: f64,
    pub decay: f64,
    pub use_correlation: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            source: DatasetSource::Sir,
            path: None,
            seed: 0,
            split: [0.6, 0.2, 0.2],
            nodes: 300,
            branching: 2,
            infection_prob: 0.8,
            samples: 200,
            dim: 10,
            classes: 2,
            separation: 1.0,
            frames: 60,
            noise: 0.5,
            scale_spread: 0.5,
            decay: 4.0,
            use_correlation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Adam step size; 1e-2 for graph tasks and 1e-1 for SPD when unset.
    pub lr: Option<f64>,
    pub epochs: usize,
    pub weight_decay: f64,
    /// Validation and test metrics are computed every this many epochs and
    /// after the last one.
    pub eval_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: None,
            epochs: 500,
            weight_decay: 0.0,
            eval_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: Task,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Validate every intermediate point during training.
    pub debug: bool,
    pub dataset: DatasetConfig,
    pub manifold: ManifoldSpec,
    pub model: ModelSpec,
    pub optimizer: OptimizerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            task: Task::Nc,
            seeds: vec![0],
            output_dir: PathBuf::from("runs/experiment"),
            debug: false,
            dataset: DatasetConfig::default(),
            manifold: ManifoldSpec::default(),
            model: ModelSpec::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative `output_dir` or dataset `path` is
    /// resolved against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let Some(p) = &cfg.dataset.path {
            if p.is_relative() {
                cfg.dataset.path = Some(base.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if let Some(lr) = self.optimizer.lr {
            if !(lr > 0.0) {
                return bad(format!("learning rate must be positive, got {lr}"));
            }
        }
        if self.optimizer.epochs == 0 || self.optimizer.eval_every == 0 {
            return bad("epochs and eval_every must be positive".into());
        }
        if !(self.optimizer.weight_decay >= 0.0) {
            return bad("weight decay must be nonnegative".into());
        }
        let spd_data = matches!(
            self.dataset.source,
            DatasetSource::SpdSynthetic | DatasetSource::SpdDir
        );
        if spd_data != (self.task == Task::SpdClassify) {
            return bad(format!(
                "task {:?} does not fit dataset source {:?}",
                self.task, self.dataset.source
            ));
        }
        if matches!(
            self.dataset.source,
            DatasetSource::GraphDir | DatasetSource::SpdDir
        ) && self.dataset.path.is_none()
        {
            return bad("directory datasets need `path`".into());
        }
        if self.dataset.split.iter().any(|&f| !(f >= 0.0))
            || self.dataset.split.iter().sum::<f64>() > 1.0 + 1e-12
        {
            return bad(format!("invalid split fractions {:?}", self.dataset.split));
        }
        Ok(())
    }

    pub fn learning_rate(&self) -> f64 {
        self.optimizer
            .lr
            .unwrap_or(if self.task == Task::SpdClassify {
                1e-1
            } else {
                1e-2
            })
    }

    /// Canonical TOML rendering used for echoing and hashing.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 over `blob <len>\0<canonical toml>`, with `output_dir`
    /// blanked so the hash identifies the experiment rather than where it ran.
    pub fn content_hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let body = canonical.to_toml()?;
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", body.len()).as_bytes());
        h.update(body.as_bytes());
        Ok(hex::encode(h.finalize()))
    }
}
