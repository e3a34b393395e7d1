//! Seeded synthetic texture classes used as the desk-scale benchmark.
//!
//! Each class is an oriented sinusoidal grating with its own orientation,
//! spatial frequency and base colour. Per image, the grating phase is offset
//! at random and Gaussian pixel noise is added. Neighbouring class indices
//! get neighbouring orientations and colours, so the class set has a
//! cyclic similarity structure.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Record};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassTexture {
    /// Grating direction in radians.
    pub orientation: f64,
    /// Cycles per pixel.
    pub frequency: f64,
    /// Grating amplitude around the base colour.
    pub amplitude: f64,
    /// RGB base colour in `[0, 1]`.
    pub color: [f64; 3],
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub size: usize,
    /// Fraction of a full period by which each image's phase is randomly shifted.
    pub phase_jitter: f64,
    /// Explicit per-class textures; generated from [`SynthSpec::default_textures`] when empty.
    #[serde(default)]
    pub textures: Vec<ClassTexture>,
    pub seed: u64,
}

impl SynthSpec {
    /// The 10-class 32×32 benchmark.
    pub fn desk_default(seed: u64) -> Self {
        Self { num_classes: 10, per_class: 60, size: 32, phase_jitter: 1.0, textures: Vec::new(), seed }
    }

    /// Cyclic family: class `k` of `K` has orientation `πk/K` and a hue that turns once around
    /// the colour wheel, so classes `k ± 1` are the most similar to `k`.
    pub fn default_textures(num_classes: usize) -> Vec<ClassTexture> {
        (0..num_classes)
            .map(|k| {
                let t = k as f64 / num_classes as f64;
                let hue = 2.0 * PI * t;
                ClassTexture {
                    orientation: PI * t,
                    frequency: 0.15,
                    amplitude: 0.22,
                    color: [
                        0.5 + 0.12 * hue.cos(),
                        0.5 + 0.12 * (hue - 2.0 * PI / 3.0).cos(),
                        0.5 + 0.12 * (hue + 2.0 * PI / 3.0).cos(),
                    ],
                    noise: 0.08,
                }
            })
            .collect()
    }

    pub fn textures(&self) -> Vec<ClassTexture> {
        if self.textures.is_empty() {
            Self::default_textures(self.num_classes)
        } else {
            self.textures.clone()
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.num_classes).map(|k| format!("class{k:02}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if self.per_class == 0 {
            return Err(Error::config("per_class", "must be positive"));
        }
        if self.size < 16 {
            return Err(Error::config("size", format!("must be at least 16, got {}", self.size)));
        }
        if !(0.0..=1.0).contains(&self.phase_jitter) {
            return Err(Error::config("phase_jitter", "must lie in [0, 1]"));
        }
        if !self.textures.is_empty() && self.textures.len() != self.num_classes {
            return Err(Error::config(
                "textures",
                format!("{} textures for {} classes", self.textures.len(), self.num_classes),
            ));
        }
        for (i, t) in self.textures.iter().enumerate() {
            let ok = t.orientation.is_finite()
                && t.frequency.is_finite()
                && t.frequency > 0.0
                && t.amplitude.is_finite()
                && t.amplitude >= 0.0
                && t.noise.is_finite()
                && t.noise >= 0.0
                && t.color.iter().all(|c| (0.0..=1.0).contains(c));
            if !ok {
                return Err(Error::config(format!("textures[{i}]"), "non-finite or out-of-range texture parameter"));
            }
        }
        Ok(())
    }
}

/// Generates the dataset. Records are ordered by class, then by index within class.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let textures = spec.textures();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.size;
    let mut records = Vec::with_capacity(spec.num_classes * spec.per_class);
    for (label, tex) in textures.iter().enumerate() {
        let noise = Normal::new(0.0, tex.noise.max(f64::MIN_POSITIVE)).expect("finite sigma");
        let (dx, dy) = (tex.orientation.cos(), tex.orientation.sin());
        for i in 0..spec.per_class {
            let phase = 2.0 * PI * spec.phase_jitter * rng.random::<f64>();
            let mut data = vec![0.0; 3 * n * n];
            for y in 0..n {
                for x in 0..n {
                    let wave = tex.amplitude * (2.0 * PI * tex.frequency * (x as f64 * dx + y as f64 * dy) + phase).sin();
                    for c in 0..3 {
                        let eps = if tex.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                        data[(c * n + y) * n + x] = (tex.color[c] + wave + eps).clamp(0.0, 1.0);
                    }
                }
            }
            records.push(Record {
                image: Tensor::new(vec![3, n, n], data)?,
                label,
                source: format!("synth:{label}:{i}"),
            });
        }
    }
    Dataset::new(records, spec.class_names())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec { num_classes: 3, per_class: 4, size: 16, phase_jitter: 1.0, textures: Vec::new(), seed }
    }

    #[test]
    fn same_seed_same_pixels() {
        let a = generate_synthetic(&small(3)).unwrap();
        let b = generate_synthetic(&small(3)).unwrap();
        let c = generate_synthetic(&small(4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 12);
        assert_eq!(a.class_counts(), vec![4, 4, 4]);
    }

    #[test]
    fn noiseless_classes_are_constant() {
        let mut spec = small(1);
        spec.phase_jitter = 0.0;
        spec.textures = SynthSpec::default_textures(3).into_iter().map(|t| ClassTexture { noise: 0.0, ..t }).collect();
        let ds = generate_synthetic(&spec).unwrap();
        for chunk in ds.records().chunks(4) {
            assert!(chunk.iter().all(|r| r.image == chunk[0].image));
        }
        assert_ne!(ds.records()[0].image, ds.records()[4].image);
    }

    #[test]
    fn invalid_specs() {
        let mut s = small(0);
        s.num_classes = 1;
        assert!(matches!(s.validate(), Err(Error::Config { ref field, .. }) if field == "num_classes"));
        let mut s = small(0);
        s.size = 8;
        assert!(s.validate().is_err());
        let mut s = small(0);
        s.textures = SynthSpec::default_textures(2);
        assert!(s.validate().is_err());
    }
}
