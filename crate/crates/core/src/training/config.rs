use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::CbowConfig;
use crate::encoder::{EncoderConfig, EncoderVariant};
use crate::model::ModelConfig;
use crate::numerics::FloatMode;

use super::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Schedule {
    #[serde(rename = "warmup-linear-decay")]
    WarmupLinearDecay,
    #[serde(rename = "linear-decay")]
    LinearDecay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    /// Whether the files are space-segmented. Spaces are always stripped
    /// before training; gold boundaries only feed validation metrics.
    pub gold: bool,
    pub min_count: usize,
    /// Pretrained embedding matrix to start from.
    pub embeddings: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: None,
            valid: None,
            gold: true,
            min_count: 1,
            embeddings: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CbowSection {
    pub enabled: bool,
    pub window: usize,
    pub epochs: usize,
    pub negatives: usize,
    pub learning_rate: f64,
}

impl Default for CbowSection {
    fn default() -> Self {
        let d = CbowConfig::default();
        CbowSection {
            enabled: false,
            window: d.window,
            epochs: d.epochs,
            negatives: d.negatives,
            learning_rate: d.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub lrs: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            lrs: vec![6e-4, 7e-4, 8e-4, 9e-4, 1e-3, 2e-3],
            seeds: vec![2, 3, 5, 8, 13],
        }
    }
}

/// Everything a training run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: EncoderVariant,
    pub max_seg_len: usize,
    pub lr: f64,
    pub steps: usize,
    pub checkpoint_every: usize,
    pub clip_norm: f64,
    pub char_budget: usize,
    pub warmup_steps: usize,
    pub schedule: Schedule,
    pub seed: u64,
    pub float: FloatMode,
    pub encoder: EncoderConfig,
    pub data: DataConfig,
    pub cbow: CbowSection,
    pub sweep: SweepSection,
}

/// The same fields with every one optional, so that a missing value is
/// reported together with every other problem.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    variant: Option<EncoderVariant>,
    max_seg_len: Option<usize>,
    lr: Option<f64>,
    steps: Option<usize>,
    checkpoint_every: Option<usize>,
    clip_norm: Option<f64>,
    char_budget: Option<usize>,
    warmup_steps: Option<usize>,
    schedule: Option<Schedule>,
    seed: Option<u64>,
    float: Option<FloatMode>,
    #[serde(default)]
    encoder: EncoderConfig,
    #[serde(default)]
    data: DataConfig,
    #[serde(default)]
    cbow: CbowSection,
    #[serde(default)]
    sweep: SweepSection,
}

impl TrainConfig {
    /// Defaults for everything but the learning rate.
    pub fn with_lr(lr: f64) -> Self {
        TrainConfig {
            variant: EncoderVariant::Masked,
            max_seg_len: 5,
            lr,
            steps: 8192,
            checkpoint_every: 128,
            clip_norm: 1.0,
            char_budget: 8192,
            warmup_steps: 1024,
            schedule: Schedule::WarmupLinearDecay,
            seed: 2,
            float: FloatMode::F64,
            encoder: EncoderConfig::default(),
            data: DataConfig::default(),
            cbow: CbowSection::default(),
            sweep: SweepSection::default(),
        }
    }

    /// Parses a TOML document, applies `key=value` overrides (dotted keys
    /// reach into tables), fills defaults and validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let raw: RawConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let mut errs = Vec::new();
        if raw.lr.is_none() {
            errs.push("lr: required".to_string());
        }
        let base = TrainConfig::with_lr(raw.lr.unwrap_or(f64::NAN));
        let cfg = TrainConfig {
            variant: raw.variant.unwrap_or(base.variant),
            max_seg_len: raw.max_seg_len.unwrap_or(base.max_seg_len),
            lr: base.lr,
            steps: raw.steps.unwrap_or(base.steps),
            checkpoint_every: raw.checkpoint_every.unwrap_or(base.checkpoint_every),
            clip_norm: raw.clip_norm.unwrap_or(base.clip_norm),
            char_budget: raw.char_budget.unwrap_or(base.char_budget),
            warmup_steps: raw.warmup_steps.unwrap_or(base.warmup_steps),
            schedule: raw.schedule.unwrap_or(base.schedule),
            seed: raw.seed.unwrap_or(base.seed),
            float: raw.float.unwrap_or(base.float),
            encoder: raw.encoder,
            data: raw.data,
            cbow: raw.cbow,
            sweep: raw.sweep,
        };
        if raw.lr.is_some() {
            errs.extend(cfg.validate());
        } else {
            errs.extend(cfg.validate().into_iter().filter(|e| !e.starts_with("lr:")));
        }
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    /// One message per offending field.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.lr.is_finite() && self.lr > 0.0) {
            errs.push(format!("lr: must be a positive number, got {}", self.lr));
        }
        if self.steps == 0 {
            errs.push("steps: must be at least 1".into());
        }
        if self.warmup_steps >= self.steps && self.schedule == Schedule::WarmupLinearDecay {
            errs.push(format!(
                "warmup_steps: {} must be below steps ({})",
                self.warmup_steps, self.steps
            ));
        }
        if self.checkpoint_every == 0 {
            errs.push("checkpoint_every: must be at least 1".into());
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            errs.push(format!("clip_norm: must be positive, got {}", self.clip_norm));
        }
        if self.char_budget == 0 {
            errs.push("char_budget: must be at least 1".into());
        }
        if self.data.min_count == 0 {
            errs.push("data.min_count: must be at least 1".into());
        }
        if self.cbow.enabled && (self.cbow.window == 0 || self.cbow.negatives == 0) {
            errs.push("cbow: window and negatives must be at least 1".into());
        }
        if self.sweep.lrs.iter().any(|&lr| !(lr.is_finite() && lr > 0.0)) {
            errs.push("sweep.lrs: every learning rate must be positive".into());
        }
        errs.extend(self.model().validate());
        errs
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig::new(self.variant, self.max_seg_len, self.encoder.clone())
    }

    pub fn cbow_config(&self) -> CbowConfig {
        CbowConfig {
            dim: self.encoder.d_model,
            window: self.cbow.window,
            epochs: self.cbow.epochs,
            negatives: self.cbow.negatives,
            learning_rate: self.cbow.learning_rate,
            seed: self.seed,
        }
    }

    /// Stable identifier used in logs and file names.
    pub fn run_id(&self) -> String {
        format!("{}-k{}-lr{}-seed{}", self.variant.name(), self.max_seg_len, self.lr, self.seed)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Sets `a.b.c = value` in `table`. The value is read as a TOML literal and
/// falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(format!("{assignment:?} is not key=value")))?;
    let key = key.trim();
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(format!("bad key {key:?}")));
    }
    let mut at = table;
    for part in &parts[..parts.len() - 1] {
        let next = at
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        at = next
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override(format!("{part:?} in {key:?} is not a table")))?;
    }
    at.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}
