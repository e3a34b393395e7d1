use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One labelled image. `image` is `[C, H, W]` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub image: Tensor,
    pub label: usize,
    /// File path or synthetic id.
    pub source: String,
}

/// Labelled images sharing a single shape, with ordered class names.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<Record>,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(records: Vec<Record>, class_names: Vec<String>) -> Result<Self> {
        let k = class_names.len();
        if let Some(first) = records.first() {
            if first.image.rank() != 3 {
                return Err(Error::Input(format!("images must be [C,H,W], got {:?}", first.image.shape())));
            }
            for r in &records {
                if r.label >= k {
                    return Err(Error::Input(format!("{}: label {} outside {k} classes", r.source, r.label)));
                }
                if r.image.shape() != first.image.shape() {
                    return Err(Error::Input(format!(
                        "{}: image shape {:?} differs from {:?}",
                        r.source,
                        r.image.shape(),
                        first.image.shape()
                    )));
                }
                if r.image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::Input(format!("{}: pixel values outside [0,1]", r.source)));
                }
            }
        }
        Ok(Self { records, class_names })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for r in &self.records {
            counts[r.label] += 1;
        }
        counts
    }

    /// `[C, H, W]` of every image, if the dataset is non-empty.
    pub fn image_shape(&self) -> Option<[usize; 3]> {
        self.records.first().map(|r| {
            let s = r.image.shape();
            [s[0], s[1], s[2]]
        })
    }

    /// New dataset with the records at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// SHA-256 over class names, labels, shapes and pixel values. Record sources are ignored.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for name in &self.class_names {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
        }
        for r in &self.records {
            h.update((r.label as u64).to_le_bytes());
            for &d in r.image.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in r.image.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Stacks the images at `indices` into `[N, C, H, W]` and returns their labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let images: Vec<&Tensor> = indices.iter().map(|&i| &self.records[i].image).collect();
        let labels = indices.iter().map(|&i| self.records[i].label).collect();
        Ok((Tensor::stack(&images)?, labels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(label: usize, v: f64) -> Record {
        Record { image: Tensor::full(vec![1, 2, 2], v), label, source: format!("r{label}") }
    }

    #[test]
    fn fingerprint_ignores_sources_but_not_pixels() {
        let a = Dataset::new(vec![rec(0, 0.1), rec(1, 0.2)], vec!["a".into(), "b".into()]).unwrap();
        let mut renamed = a.clone();
        renamed.records[0].source = "elsewhere".into();
        assert_eq!(a.fingerprint(), renamed.fingerprint());
        let b = Dataset::new(vec![rec(0, 0.1), rec(1, 0.3)], vec!["a".into(), "b".into()]).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn validates_labels_shapes_and_range() {
        let names = vec!["a".to_string(), "b".to_string()];
        assert!(Dataset::new(vec![rec(0, 0.1), rec(1, 0.2)], names.clone()).is_ok());
        assert!(Dataset::new(vec![rec(2, 0.1)], names.clone()).is_err());
        assert!(Dataset::new(vec![rec(0, 1.5)], names.clone()).is_err());
        let odd = Record { image: Tensor::zeros(vec![1, 3, 2]), label: 0, source: "odd".into() };
        let err = Dataset::new(vec![rec(0, 0.0), odd], names).unwrap_err();
        assert!(err.to_string().contains("odd"));
    }

    #[test]
    fn counts_and_batches() {
        let ds = Dataset::new(vec![rec(0, 0.1), rec(1, 0.2), rec(1, 0.3)], vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(ds.class_counts(), vec![1, 2]);
        let (b, l) = ds.batch(&[2, 0]).unwrap();
        assert_eq!(b.shape(), &[2, 1, 2, 2]);
        assert_eq!(l, vec![1, 0]);
        assert_eq!(b.data()[0], 0.3);
    }
}
