//! Experiment configuration: the full training recipe with defaults, TOML
//! parsing, and dotted-path overrides. Unknown keys are rejected rather than
//! silently absorbed.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::nets::{DiscriminatorSpec, GeneratorSpec};

/// Training-image folders for the two domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    pub x: PathBuf,
    pub y: PathBuf,
}

/// Adam settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 2e-4,
            beta1: 0.95,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Linear learning-rate decay window: full rate before `start_iter`, zero at
/// `end_iter`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrDecay {
    pub start_iter: u64,
    pub end_iter: u64,
}

impl Default for LrDecay {
    fn default() -> Self {
        LrDecay {
            start_iter: 150_000,
            end_iter: 300_000,
        }
    }
}

/// Scheduled-loss-normalization constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlnConfig {
    pub decay: f64,
    pub epsilon: f64,
    pub period: u64,
}

impl Default for SlnConfig {
    fn default() -> Self {
        SlnConfig {
            decay: 0.99,
            epsilon: 1e-10,
            period: 200,
        }
    }
}

/// The full training recipe. Defaults reproduce the reference setup: 128px
/// images, batch 16, Adam(2e-4, 0.95, 0.999), 150k iterations with the
/// discriminator updated every step, and linear rate decay over
/// 150k..300k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataPaths,
    pub image_size: usize,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub weights: LossWeights,
    /// Augmentation for domain X. For the synthetic polygon domain the
    /// default configs disable rotation here: centering is a domain
    /// invariant.
    pub augment_x: AugmentConfig,
    pub augment_y: AugmentConfig,
    pub batch_size: usize,
    pub total_iterations: u64,
    /// Update the discriminators every N generator updates (1 or 2).
    pub discriminator_every: u64,
    pub optimizer: OptimizerConfig,
    pub lr_decay: LrDecay,
    pub sln: SlnConfig,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub eval_every: u64,
    /// Batches per epoch, for epoch accounting in the stream and logs.
    pub epoch_size: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataPaths::default(),
            image_size: 128,
            generator: GeneratorSpec::default(),
            discriminator: DiscriminatorSpec::default(),
            weights: LossWeights::default(),
            augment_x: AugmentConfig::default(),
            augment_y: AugmentConfig::default(),
            batch_size: 16,
            total_iterations: 150_000,
            discriminator_every: 1,
            optimizer: OptimizerConfig::default(),
            lr_decay: LrDecay::default(),
            sln: SlnConfig::default(),
            seed: 0,
            checkpoint_every: 10_000,
            eval_every: 2_000,
            epoch_size: 1_000,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.weights.validate()?;
        self.augment_x.validate()?;
        self.augment_y.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(1..=2).contains(&self.discriminator_every) {
            return Err(Error::Config(format!(
                "discriminator_every must be 1 or 2, got {}",
                self.discriminator_every
            )));
        }
        let multiple = 1usize << self.generator.downsamples;
        if self.image_size == 0 || self.image_size % multiple != 0 {
            return Err(Error::Config(format!(
                "image_size {} must be a positive multiple of {multiple}",
                self.image_size
            )));
        }
        for (name, aug) in [("augment_x", &self.augment_x), ("augment_y", &self.augment_y)] {
            if aug.crop_size != self.image_size {
                return Err(Error::Config(format!(
                    "{name}.crop_size ({}) must equal image_size ({})",
                    aug.crop_size, self.image_size
                )));
            }
        }
        if self.lr_decay.start_iter > self.lr_decay.end_iter {
            return Err(Error::Config(format!(
                "lr_decay.start_iter {} exceeds end_iter {}",
                self.lr_decay.start_iter, self.lr_decay.end_iter
            )));
        }
        if !(0.0..1.0).contains(&self.sln.decay) || self.sln.decay == 0.0 {
            return Err(Error::Config(format!(
                "sln.decay must be in (0, 1), got {}",
                self.sln.decay
            )));
        }
        if self.sln.period == 0 {
            return Err(Error::Config("sln.period must be positive".into()));
        }
        if self.checkpoint_every == 0 || self.eval_every == 0 || self.epoch_size == 0 {
            return Err(Error::Config(
                "checkpoint_every, eval_every and epoch_size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate at a 1-based iteration: constant before the decay
    /// window, linear to zero inside it, zero after.
    pub fn learning_rate_at(&self, iteration: u64) -> f64 {
        let base = self.optimizer.learning_rate;
        let LrDecay {
            start_iter,
            end_iter,
        } = self.lr_decay;
        if iteration <= start_iter || end_iter == start_iter {
            base
        } else if iteration >= end_iter {
            0.0
        } else {
            base * (end_iter - iteration) as f64 / (end_iter - start_iter) as f64
        }
    }

    /// Parses a config file, layering it over the defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `key.path=value` overrides on top of this config. Values are
    /// parsed as TOML literals, falling back to strings; unknown keys are
    /// rejected when the merged document is re-deserialized.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let text = self.to_toml_string()?;
        let mut doc: toml::Value =
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        for (path, raw) in overrides {
            let value = parse_toml_literal(raw);
            set_path(&mut doc, path, value)?;
        }
        let merged: ExperimentConfig = doc
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(merged)
    }
}

fn parse_toml_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    if let Ok(table) = toml::from_str::<toml::Table>(&doc) {
        if let Some(v) = table.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

fn set_path(doc: &mut toml::Value, path: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key {path:?}")));
    }
    let mut cursor = doc;
    for part in &parts[..parts.len() - 1] {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key {path:?} crosses a non-table")))?;
        cursor = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = cursor
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override key {path:?} crosses a non-table")))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
