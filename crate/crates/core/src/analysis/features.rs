use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;

/// One feature vector per image, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    rows: usize,
    width: usize,
    data: Vec<f64>,
    labels: Vec<usize>,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::Input(format!("{} feature rows but {} labels", rows.len(), labels.len())));
        }
        let width = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != width) {
            return Err(Error::Input(format!("row {bad} has length {} instead of {width}", rows[bad].len())));
        }
        Ok(Self { rows: rows.len(), width, data: rows.concat(), labels })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Penultimate features of every record, in dataset order.
pub fn extract_features(model: &Model, dataset: &Dataset) -> Result<FeatureMatrix> {
    if dataset.is_empty() {
        return Err(Error::Input("cannot extract features from an empty dataset".into()));
    }
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut rows = Vec::with_capacity(dataset.len());
    for chunk in idx.chunks(64) {
        let (batch, _) = dataset.batch(chunk)?;
        rows.extend(model.penultimate_features_batch(batch)?);
    }
    FeatureMatrix::new(rows, dataset.labels())
}

/// Squared Euclidean distance.
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
