use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::au::ClassifierConfig;
use crate::embed::EmbeddingConfig;
use crate::error::{Error, Result};
use crate::geometry::AlignmentConfig;
use crate::morphable::FitConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        }
    }

    pub fn default_learning_rate(self) -> f64 {
        match self {
            Stage::Pretrain => 2e-4,
            Stage::Finetune => 2e-3,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "finetune" => Ok(Stage::Finetune),
            other => Err(Error::Config(format!("unknown stage `{other}`"))),
        }
    }
}

/// How per-example losses of a batch are combined into the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    Mean,
}

impl Stage {
    /// Triplet losses are summed over the batch; AU losses are averaged.
    pub fn default_reduction(self) -> Reduction {
        match self {
            Stage::Pretrain => Reduction::Sum,
            Stage::Finetune => Reduction::Mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub reduction: Reduction,
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Finetune without loading pretrained branch weights.
    pub fresh_start: bool,
    /// Keep the global and local branches fixed during finetuning.
    pub fixed_branches: bool,
    /// Stop finetuning once every training frame is classified correctly.
    pub stop_when_perfect: bool,
    pub alignment: AlignmentConfig,
    pub embedding: EmbeddingConfig,
    pub classifier: ClassifierConfig,
    pub fit: FitConfig,
}

/// On-disk form: every field optional so stage defaults can fill the gaps.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    stage: Option<Stage>,
    seed: Option<u64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    optimizer: RawOptimizer,
    fresh_start: Option<bool>,
    fixed_branches: Option<bool>,
    stop_when_perfect: Option<bool>,
    alignment: Option<AlignmentConfig>,
    embedding: Option<EmbeddingConfig>,
    classifier: Option<ClassifierConfig>,
    fit: Option<FitConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawOptimizer {
    learning_rate: Option<f64>,
    momentum: Option<f64>,
    reduction: Option<Reduction>,
}

impl TrainConfig {
    /// SGD with momentum 0.9, 10 epochs, batch 30 and the stage's learning rate.
    pub fn for_stage(stage: Stage) -> Self {
        TrainConfig {
            stage,
            seed: 0,
            epochs: 10,
            batch_size: 30,
            optimizer: OptimizerConfig {
                learning_rate: stage.default_learning_rate(),
                momentum: 0.9,
                reduction: stage.default_reduction(),
            },
            fresh_start: false,
            fixed_branches: false,
            stop_when_perfect: false,
            alignment: AlignmentConfig::default(),
            embedding: EmbeddingConfig::default(),
            classifier: ClassifierConfig::default(),
            fit: FitConfig::default(),
        }
    }

    pub fn pretrain() -> Self {
        Self::for_stage(Stage::Pretrain)
    }

    pub fn finetune() -> Self {
        Self::for_stage(Stage::Finetune)
    }

    /// Parses TOML; `stage` defaults to `fallback_stage` and picks the defaults
    /// of unspecified fields.
    pub fn from_toml(text: &str, fallback_stage: Stage) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let stage = raw.stage.unwrap_or(fallback_stage);
        let base = Self::for_stage(stage);
        let config = TrainConfig {
            stage,
            seed: raw.seed.unwrap_or(base.seed),
            epochs: raw.epochs.unwrap_or(base.epochs),
            batch_size: raw.batch_size.unwrap_or(base.batch_size),
            optimizer: OptimizerConfig {
                learning_rate: raw.optimizer.learning_rate.unwrap_or(base.optimizer.learning_rate),
                momentum: raw.optimizer.momentum.unwrap_or(base.optimizer.momentum),
                reduction: raw.optimizer.reduction.unwrap_or(base.optimizer.reduction),
            },
            fresh_start: raw.fresh_start.unwrap_or(base.fresh_start),
            fixed_branches: raw.fixed_branches.unwrap_or(base.fixed_branches),
            stop_when_perfect: raw.stop_when_perfect.unwrap_or(base.stop_when_perfect),
            alignment: raw.alignment.unwrap_or(base.alignment),
            embedding: raw.embedding.unwrap_or(base.embedding),
            classifier: raw.classifier.unwrap_or(base.classifier),
            fit: raw.fit.unwrap_or(base.fit),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, fallback_stage: Stage) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, fallback_stage).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.optimizer.learning_rate;
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        let mu = self.optimizer.momentum;
        if !(0.0..1.0).contains(&mu) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {mu}")));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        self.alignment.validate()?;
        self.embedding.validate()?;
        self.classifier.validate()?;
        self.fit.validate()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("train config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
