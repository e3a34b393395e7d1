//! The JSON run configuration shared by every subcommand.
//!
//! Every section is optional. Section seeds default to offsets of the top-level
//! `seed`, so one number pins down a whole pipeline run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::TsneInit;
use crate::attack::AttackConfig;
use crate::data::{ClassTexture, SynthSpec};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelFamily};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub attack: AttackSection,
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub num_classes: usize,
    pub per_class: usize,
    pub size: usize,
    pub phase_jitter: f64,
    pub textures: Vec<ClassTexture>,
    pub seed: Option<u64>,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthSpec::desk_default(0);
        Self {
            num_classes: d.num_classes,
            per_class: d.per_class,
            size: d.size,
            phase_jitter: d.phase_jitter,
            textures: Vec::new(),
            seed: None,
        }
    }
}

/// Architecture choice; input shape and class count come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub family: ModelFamily,
    pub widths: Option<Vec<usize>>,
    pub modules: Option<usize>,
    pub aux_heads: Option<Vec<usize>>,
    pub aux_weight: Option<f64>,
    pub seed: Option<u64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { family: ModelFamily::Plain, widths: None, modules: None, aux_heads: None, aux_weight: None, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub train_fraction: f64,
    pub split_seed: Option<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub shuffle: bool,
    pub seed: Option<u64>,
    /// Separately trained model on a small subset of the training split, to check capacity.
    pub memorization: Option<MemorizationSection>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            train_fraction: 0.8,
            split_seed: None,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            shuffle: t.shuffle,
            seed: None,
            memorization: Some(MemorizationSection::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemorizationSection {
    pub samples: usize,
    pub epochs: usize,
    pub seed: Option<u64>,
}

impl Default for MemorizationSection {
    fn default() -> Self {
        Self { samples: 200, epochs: 50, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub campaigns: Vec<AttackConfig>,
    /// Successful adversarial examples per campaign written as PPM pairs.
    pub dump_images: usize,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self { campaigns: AttackConfig::default_sweep(), dump_images: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub perplexity: f64,
    pub iterations: usize,
    pub init: TsneInit,
    /// Nearest classes per source; `min(5, K − 1)` when unset.
    pub k: Option<usize>,
    pub seed: Option<u64>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self { perplexity: 15.0, iterations: 500, init: TsneInit::Pca, k: None, seed: None }
    }
}

impl RunConfig {
    /// Reads a config file; a missing path gives the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            Error::Config { field, detail: e.into_inner().to_string() }
        })
    }

    /// Fills every unset seed from the top-level seed.
    pub fn resolved(mut self) -> Self {
        let s = self.seed;
        self.synth.seed.get_or_insert(s);
        self.model.seed.get_or_insert(s.wrapping_add(1));
        self.train.split_seed.get_or_insert(s.wrapping_add(2));
        self.train.seed.get_or_insert(s.wrapping_add(3));
        self.analysis.seed.get_or_insert(s.wrapping_add(4));
        if let Some(m) = &mut self.train.memorization {
            m.seed.get_or_insert(s.wrapping_add(5));
        }
        self
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            num_classes: self.synth.num_classes,
            per_class: self.synth.per_class,
            size: self.synth.size,
            phase_jitter: self.synth.phase_jitter,
            textures: self.synth.textures.clone(),
            seed: self.synth.seed.unwrap_or(self.seed),
        }
    }

    pub fn model_config(&self, input_shape: [usize; 3], num_classes: usize) -> ModelConfig {
        let m = &self.model;
        let mut c = match m.family {
            ModelFamily::Plain => ModelConfig::plain(input_shape, num_classes),
            ModelFamily::MiniInception => ModelConfig::mini_inception(input_shape, num_classes),
            ModelFamily::MiniResnet => ModelConfig::mini_resnet(input_shape, num_classes),
        };
        if let Some(w) = &m.widths {
            c.widths = w.clone();
        }
        if let Some(n) = m.modules {
            c.modules = n;
        }
        if let Some(a) = &m.aux_heads {
            c.aux_heads = a.clone();
        }
        if let Some(w) = m.aux_weight {
            c.aux_weight = w;
        }
        c
    }

    pub fn model_seed(&self) -> u64 {
        self.model.seed.unwrap_or(self.seed.wrapping_add(1))
    }

    pub fn split_seed(&self) -> u64 {
        self.train.split_seed.unwrap_or(self.seed.wrapping_add(2))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            seed: t.seed.unwrap_or(self.seed.wrapping_add(3)),
            shuffle: t.shuffle,
        }
    }

    pub fn tsne_seed(&self) -> u64 {
        self.analysis.seed.unwrap_or(self.seed.wrapping_add(4))
    }

    /// Checks every section; error field paths are prefixed with the section name.
    pub fn validate(&self) -> Result<()> {
        self.synth_spec().validate().map_err(|e| e.in_section("synth"))?;
        self.train_config().validate().map_err(|e| e.in_section("train"))?;
        let f = self.train.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::config("train.train_fraction", format!("{f} is outside (0, 1)")));
        }
        if let Some(m) = &self.train.memorization {
            if m.samples == 0 {
                return Err(Error::config("train.memorization.samples", "must be positive"));
            }
            if m.epochs == 0 {
                return Err(Error::config("train.memorization.epochs", "must be positive"));
            }
        }
        if self.attack.campaigns.is_empty() {
            return Err(Error::config("attack.campaigns", "at least one campaign is required"));
        }
        for (i, c) in self.attack.campaigns.iter().enumerate() {
            c.validate().map_err(|e| e.in_section(&format!("attack.campaigns[{i}]")))?;
        }
        let a = &self.analysis;
        if !(a.perplexity.is_finite() && a.perplexity >= 3.0) {
            return Err(Error::config("analysis.perplexity", "must be at least 3"));
        }
        if a.iterations == 0 {
            return Err(Error::config("analysis.iterations", "must be at least 1"));
        }
        if a.k == Some(0) {
            return Err(Error::config("analysis.k", "must be at least 1"));
        }
        Ok(())
    }

    /// Model-section validation once the dataset shape is known.
    pub fn validate_model(&self, input_shape: [usize; 3], num_classes: usize) -> Result<ModelConfig> {
        let c = self.model_config(input_shape, num_classes);
        c.validate().map_err(|e| e.in_section("model"))?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn seeds_derive_from_the_top_level_seed() {
        let c = RunConfig::from_json(r#"{"seed": 10, "train": {"seed": 99}}"#).unwrap().resolved();
        assert_eq!(c.synth.seed, Some(10));
        assert_eq!(c.model.seed, Some(11));
        assert_eq!(c.train.split_seed, Some(12));
        assert_eq!(c.train.seed, Some(99));
        assert_eq!(c.analysis.seed, Some(14));
    }

    #[test]
    fn field_paths_in_errors() {
        let e = RunConfig::from_json(r#"{"train": {"epochz": 3}}"#).unwrap_err();
        assert!(matches!(&e, Error::Config { field, .. } if field == "train.epochz"), "{e}");
        let c = RunConfig::from_json(r#"{"synth": {"num_classes": 1}}"#).unwrap();
        assert!(matches!(c.validate(), Err(Error::Config { ref field, .. }) if field == "synth.num_classes"));
        let c = RunConfig::from_json(r#"{"attack": {"campaigns": [{"algorithm": "BIM", "epsilon": 0.1, "step_size": 0.5, "iterations": 3}]}}"#)
            .unwrap();
        let e = c.validate().unwrap_err();
        assert!(matches!(&e, Error::Config { field, .. } if field.starts_with("attack.campaigns[0].")), "{e}");
    }

    #[test]
    fn model_overrides() {
        let c = RunConfig::from_json(r#"{"model": {"family": "mini-resnet", "modules": 2}}"#).unwrap();
        let m = c.validate_model([3, 16, 16], 4).unwrap();
        assert_eq!(m.family, ModelFamily::MiniResnet);
        assert_eq!(m.modules, 2);
        let bad = RunConfig::from_json(r#"{"model": {"widths": [8, 0]}}"#).unwrap();
        assert!(matches!(bad.validate_model([3, 16, 16], 4), Err(Error::Config { ref field, .. }) if field.starts_with("model.")));
    }
}
