use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::latency::{BenchProtocol, PredictorConfig};
use crate::search::{SearchConfig, SearchSpace};
use crate::seed;
use crate::training::{AdamConfig, FinetuneConfig, TrainConfig};
use crate::transformer::{Architecture, ModelDims, MAX_SEQ_LEN};

use super::task::TaskSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileConfig {
    /// Architectures sampled from the search space for the latency dataset.
    pub samples: usize,
    /// Also time the fp32 model of every sample.
    pub include_f32: bool,
    /// Passes over the sample; latencies average the timed runs of all passes.
    pub rounds: usize,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            samples: 240,
            include_f32: true,
            rounds: 1,
        }
    }
}

/// Optimizer settings shared by every supervised fine-tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneSettings {
    pub batch_size: usize,
    pub peak_lr: f32,
    pub warmup_fraction: f64,
    pub adam: AdamConfig,
}

impl Default for FinetuneSettings {
    fn default() -> Self {
        let d = FinetuneConfig::default();
        Self {
            batch_size: d.batch_size,
            peak_lr: 3e-4,
            warmup_fraction: d.warmup_fraction,
            adam: d.adam,
        }
    }
}

impl FinetuneSettings {
    pub fn with(&self, epochs: usize, seed: u64) -> FinetuneConfig {
        FinetuneConfig {
            epochs,
            batch_size: self.batch_size,
            peak_lr: self.peak_lr,
            warmup_fraction: self.warmup_fraction,
            adam: self.adam,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    pub arch: Architecture,
    pub epochs: usize,
    pub training: FinetuneSettings,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            arch: Architecture::new(4, 528, 1016),
            epochs: 8,
            training: FinetuneSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupermodelConfig {
    pub train: TrainConfig,
    /// Updates between checkpoints; 0 saves only at the end.
    pub checkpoint_every: u64,
}

impl Default for SupermodelConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                peak_lr: 5e-4,
                ..TrainConfig::default()
            },
            checkpoint_every: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    /// Fixed ladder of hand-picked architectures.
    pub archs: Vec<Architecture>,
    /// Distillation epochs from the teacher before fine-tuning.
    pub distill_epochs: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            archs: vec![
                Architecture::new(2, 240, 956),
                Architecture::new(2, 528, 1016),
                Architecture::new(4, 240, 956),
                Architecture::new(4, 528, 1016),
            ],
            distill_epochs: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Master seed; every component seed is derived from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub task: TaskSpec,
    pub space: SearchSpace,
    /// Latency constraints `l` searched by `search`, in ms.
    pub latency_targets_ms: Vec<f64>,
    pub bench: BenchProtocol,
    pub profile: ProfileConfig,
    pub predictor: PredictorConfig,
    pub teacher: TeacherConfig,
    pub supermodel: SupermodelConfig,
    pub search: SearchConfig,
    /// Optimizer settings for candidate and baseline fine-tuning.
    pub finetune: FinetuneSettings,
    pub baselines: BaselineConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            task: TaskSpec::default(),
            space: SearchSpace::default(),
            latency_targets_ms: vec![5.0, 10.0, 20.0, 40.0],
            bench: BenchProtocol::default(),
            profile: ProfileConfig::default(),
            predictor: PredictorConfig::default(),
            teacher: TeacherConfig::default(),
            supermodel: SupermodelConfig::default(),
            search: SearchConfig::default(),
            finetune: FinetuneSettings::default(),
            baselines: BaselineConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: path.to_path_buf(),
                what: "pipeline config".into(),
            },
            _ => Error::Io(e),
        })?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.space.validate()?;
        self.bench.validate()?;
        self.predictor.validate()?;
        self.supermodel.train.validate()?;
        self.search.validate()?;
        self.teacher.arch.validate()?;
        if self.latency_targets_ms.is_empty() || self.latency_targets_ms.iter().any(|&l| !(l > 0.0))
        {
            return Err(Error::Config(
                "latency_targets_ms needs at least one positive value".into(),
            ));
        }
        if self.profile.samples < 2 {
            return Err(Error::Config("profile.samples must be at least 2".into()));
        }
        if self.profile.samples > self.space.len() {
            return Err(Error::Config(format!(
                "profile.samples {} exceeds the {} architectures in the space",
                self.profile.samples,
                self.space.len()
            )));
        }
        if self.profile.rounds == 0 {
            return Err(Error::Config("profile.rounds must be at least 1".into()));
        }
        if self.teacher.epochs == 0 || self.search.finetune_epochs == 0 {
            return Err(Error::Config(
                "teacher and candidate fine-tuning need at least one epoch".into(),
            ));
        }
        if self.finetune.batch_size == 0 || self.teacher.training.batch_size == 0 {
            return Err(Error::Config(
                "fine-tuning batch size must be positive".into(),
            ));
        }
        for a in &self.baselines.archs {
            a.validate()?;
        }
        if self.baselines.archs.is_empty() {
            return Err(Error::Config("baselines.archs must not be empty".into()));
        }
        Ok(())
    }

    /// Shape constants of every model in the run.
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            vocab: self.task.vocab,
            max_len: MAX_SEQ_LEN.max(self.task.seq_len).max(self.bench.seq_len),
            classes: self.task.classes,
        }
    }

    /// Supermodel shape: the elementwise maximum of the space.
    pub fn supermodel_arch(&self) -> Architecture {
        self.space.max_arch()
    }

    /// Seed of a named component.
    pub fn seed_for(&self, component: &str) -> u64 {
        seed::derive(self.seed, component)
    }
}

/// Hex sha256 of the JSON encoding of `parts`, used to stamp artifacts.
pub fn content_hash(parts: &impl Serialize) -> Result<String> {
    let bytes = serde_json::to_vec(parts)?;
    Ok(hex::encode(&Sha256::digest(&bytes)[..16]))
}
