//! Run configuration: one JSON document covering dimensions, stage
//! schedules and the split protocol. Unknown keys are rejected by name;
//! the seed has no default, so every run states its randomness up front.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum ConfigError {
    #[error("config error: {0}")]
    Invalid(String),
    #[error("failed to read config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    /// GIN hidden width.
    pub graph_hidden: usize,
    /// Graph feature size e (the query side).
    pub graph_dim: usize,
    /// Text tower output size.
    pub text_dim: usize,
    /// Shared contrastive space size.
    pub proj_dim: usize,
    /// LM embedding width D.
    pub embed_dim: usize,
    /// Cross-attention associative size d per head.
    pub head_dim: usize,
    /// Cross-attention heads k.
    pub heads: usize,
    /// Compressed vocabulary rows, must stay well under vocab_size.
    pub compressed: usize,
    pub vocab_size: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            graph_hidden: 64,
            graph_dim: 64,
            text_dim: 64,
            proj_dim: 32,
            embed_dim: 64,
            head_dim: 16,
            heads: 4,
            compressed: 64,
            vocab_size: 1000,
        }
    }
}

impl Dims {
    /// Small dimensions for the gradient-check suite, where the
    /// finite-difference pass visits every coordinate.
    pub fn tiny() -> Self {
        Dims {
            graph_hidden: 8,
            graph_dim: 8,
            text_dim: 8,
            proj_dim: 4,
            embed_dim: 8,
            head_dim: 4,
            heads: 2,
            compressed: 8,
            vocab_size: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StageSchedule {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Stage1Config {
    #[serde(flatten)]
    pub schedule: StageSchedule,
    pub tau_init: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Stage2Config {
    #[serde(flatten)]
    pub schedule: StageSchedule,
    /// Task names trained in stage 2.
    pub tasks: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FewshotConfig {
    #[serde(flatten)]
    pub schedule: StageSchedule,
    /// Fraction of the train split sampled for adaptation.
    pub fraction: f64,
    /// Held-out task to adapt to.
    pub task: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Mandatory; there is no entropy-source fallback anywhere.
    pub seed: u64,
    #[serde(default)]
    pub dims: Dims,
    #[serde(default = "default_backbone")]
    pub backbone: StageSchedule,
    #[serde(default = "default_stage1")]
    pub stage1: Stage1Config,
    #[serde(default = "default_stage2")]
    pub stage2: Stage2Config,
    #[serde(default = "default_fewshot")]
    pub fewshot: FewshotConfig,
    #[serde(default)]
    pub split: SplitRatios,
    #[serde(default = "default_dataset")]
    pub dataset: String,
    /// Optional prompt layout template file.
    #[serde(default)]
    pub template: Option<String>,
}

fn default_backbone() -> StageSchedule {
    StageSchedule {
        steps: 300,
        learning_rate: 0.05,
        batch_size: 4,
    }
}

fn default_stage1() -> Stage1Config {
    Stage1Config {
        schedule: StageSchedule {
            steps: 300,
            learning_rate: 0.05,
            batch_size: 8,
        },
        tau_init: 0.07,
    }
}

fn default_stage2() -> Stage2Config {
    Stage2Config {
        schedule: StageSchedule {
            steps: 500,
            learning_rate: 0.05,
            batch_size: 4,
        },
        tasks: vec!["has_oxygen".to_string()],
    }
}

fn default_fewshot() -> FewshotConfig {
    FewshotConfig {
        schedule: StageSchedule {
            steps: 150,
            learning_rate: 0.05,
            batch_size: 4,
        },
        fraction: 0.05,
        task: "atoms".to_string(),
    }
}

fn default_dataset() -> String {
    "fixtures/molecules.jsonl".to_string()
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        TrainConfig {
            seed,
            dims: Dims::default(),
            backbone: default_backbone(),
            stage1: default_stage1(),
            stage2: default_stage2(),
            fewshot: default_fewshot(),
            split: SplitRatios::default(),
            dataset: default_dataset(),
            template: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: TrainConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let problem = |key: &str| Err(ConfigError::Invalid(format!("invalid value for `{key}`")));
        for (key, schedule) in [
            ("backbone", &self.backbone),
            ("stage1", &self.stage1.schedule),
            ("stage2", &self.stage2.schedule),
            ("fewshot", &self.fewshot.schedule),
        ] {
            if schedule.steps == 0 || schedule.batch_size == 0 {
                return problem(&format!("{key}.steps/batch_size"));
            }
            if !(schedule.learning_rate > 0.0 && schedule.learning_rate.is_finite()) {
                return problem(&format!("{key}.learning_rate"));
            }
        }
        if !(self.stage1.tau_init > 0.0) {
            return problem("stage1.tau_init");
        }
        if !(self.fewshot.fraction > 0.0 && self.fewshot.fraction <= 1.0) {
            return problem("fewshot.fraction");
        }
        let d = &self.dims;
        if [
            d.graph_hidden,
            d.graph_dim,
            d.text_dim,
            d.proj_dim,
            d.embed_dim,
            d.head_dim,
            d.heads,
            d.compressed,
            d.vocab_size,
        ]
        .iter()
        .any(|&v| v == 0)
        {
            return problem("dims");
        }
        if d.compressed * 4 > d.vocab_size {
            return problem("dims.compressed");
        }
        let s = &self.split;
        if s.train <= 0.0 || s.valid <= 0.0 || s.test <= 0.0 {
            return problem("split");
        }
        if (s.train + s.valid + s.test - 1.0).abs() > 1e-9 {
            return problem("split (ratios must sum to 1)");
        }
        Ok(())
    }

    /// Hash of the canonical JSON form. serde_json maps sort their keys,
    /// so any key order in the source document hashes identically.
    pub fn config_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        let mut h = Sha256::new();
        h.update(canonical.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
