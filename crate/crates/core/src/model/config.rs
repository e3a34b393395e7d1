use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    /// Alternating conv/ReLU/max-pool stages followed by one dense classifier.
    Plain,
    /// Stem conv, inception modules (1×1 and 3×3 branches), GAP, optional auxiliary heads.
    MiniInception,
    /// Stem conv, residual blocks with identity shortcuts, GAP.
    MiniResnet,
}

/// Architecture description. Parameter shapes are a pure function of this value.
///
/// How `widths` and `modules` are read depends on the family:
///
/// * `plain`: `widths[i]` is the output channel count of conv stage `i`; `modules` must be 0.
/// * `mini-inception`: `widths[0]` is the stem width and `widths[1 + m]` the width of each
///   branch of inception module `m`, so `widths.len() == modules + 1`. A module emits
///   `2 · widths[1 + m]` channels.
/// * `mini-resnet`: `widths == [w]`, the stem and block width; `modules` is the block count.
///
/// `aux_heads` lists inception modules (0-based) followed by an auxiliary classifier that is
/// evaluated only in training mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: ModelFamily,
    /// `[channels, height, width]`
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub widths: Vec<usize>,
    #[serde(default)]
    pub modules: usize,
    #[serde(default)]
    pub aux_heads: Vec<usize>,
    #[serde(default = "default_aux_weight")]
    pub aux_weight: f64,
}

fn default_aux_weight() -> f64 {
    0.3
}

impl ModelConfig {
    pub fn plain(input_shape: [usize; 3], num_classes: usize) -> Self {
        Self {
            family: ModelFamily::Plain,
            input_shape,
            num_classes,
            widths: vec![8, 16],
            modules: 0,
            aux_heads: Vec::new(),
            aux_weight: default_aux_weight(),
        }
    }

    pub fn mini_inception(input_shape: [usize; 3], num_classes: usize) -> Self {
        Self {
            family: ModelFamily::MiniInception,
            input_shape,
            num_classes,
            widths: vec![8, 8, 8],
            modules: 2,
            aux_heads: vec![0],
            aux_weight: default_aux_weight(),
        }
    }

    pub fn mini_resnet(input_shape: [usize; 3], num_classes: usize) -> Self {
        Self {
            family: ModelFamily::MiniResnet,
            input_shape,
            num_classes,
            widths: vec![8],
            modules: 3,
            aux_heads: Vec::new(),
            aux_weight: default_aux_weight(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if self.input_shape.contains(&0) {
            return Err(Error::config("input_shape", "every extent must be positive"));
        }
        if self.widths.is_empty() {
            return Err(Error::config("widths", "at least one stage width is required"));
        }
        if let Some(i) = self.widths.iter().position(|&w| w == 0) {
            return Err(Error::config(format!("widths[{i}]"), "stage width must be at least 1"));
        }
        if !(self.aux_weight.is_finite() && self.aux_weight >= 0.0) {
            return Err(Error::config("aux_weight", "must be finite and non-negative"));
        }
        if self.family != ModelFamily::MiniInception && !self.aux_heads.is_empty() {
            return Err(Error::config("aux_heads", "auxiliary heads exist only in the mini-inception family"));
        }
        match self.family {
            ModelFamily::Plain => {
                if self.modules != 0 {
                    return Err(Error::config("modules", "plain models have no modules; use widths for stages"));
                }
            }
            ModelFamily::MiniInception => {
                if self.modules == 0 {
                    return Err(Error::config("modules", "need at least one inception module"));
                }
                if self.widths.len() != self.modules + 1 {
                    return Err(Error::config(
                        "widths",
                        format!("expected {} entries (stem + one per module), got {}", self.modules + 1, self.widths.len()),
                    ));
                }
                if let Some(&p) = self.aux_heads.iter().find(|&&p| p >= self.modules) {
                    return Err(Error::config("aux_heads", format!("module {p} does not exist ({} modules)", self.modules)));
                }
            }
            ModelFamily::MiniResnet => {
                if self.modules == 0 {
                    return Err(Error::config("modules", "need at least one residual block"));
                }
                if self.widths.len() != 1 {
                    return Err(Error::config("widths", "mini-resnet takes a single width shared by stem and blocks"));
                }
            }
        }
        let [_, mut h, mut w] = self.input_shape;
        for stage in 0..self.pool_count() {
            if h < 2 || w < 2 {
                return Err(Error::config(
                    "input_shape",
                    format!("spatial extent {h}x{w} too small for pooling stage {stage}"),
                ));
            }
            h /= 2;
            w /= 2;
        }
        Ok(())
    }

    /// Number of 2×2 max-pool stages along the main path.
    pub(crate) fn pool_count(&self) -> usize {
        match self.family {
            ModelFamily::Plain => self.widths.len(),
            ModelFamily::MiniInception => self.modules, // stem + every module but the last
            ModelFamily::MiniResnet => 1,
        }
    }

    /// Length of the penultimate feature vector (the input of the final dense layer).
    pub fn feature_width(&self) -> usize {
        match self.family {
            ModelFamily::Plain => {
                let [_, h, w] = self.input_shape;
                let p = self.pool_count();
                self.widths[self.widths.len() - 1] * (h >> p) * (w >> p)
            }
            ModelFamily::MiniInception => 2 * self.widths[self.modules],
            ModelFamily::MiniResnet => self.widths[0],
        }
    }
}
