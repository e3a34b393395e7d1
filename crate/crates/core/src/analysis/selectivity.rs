use serde::{Deserialize, Serialize};

use super::centers::{nearest_classes, ClassCenters};
use crate::attack::CampaignResult;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub class: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSelectivity {
    pub source: usize,
    pub nearest: Vec<Neighbor>,
    /// Successful adversarial examples per adversarial class.
    pub target_histogram: Vec<usize>,
    pub successes: usize,
    /// Successes whose adversarial class is among `nearest`.
    pub hits: usize,
    /// `hits / successes`; absent when the class has no successes.
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivityReport {
    pub k: usize,
    pub num_classes: usize,
    pub per_source: Vec<SourceSelectivity>,
    pub total_successes: usize,
    pub total_hits: usize,
    /// Pooled over all successful attacks; absent when there are none.
    pub coverage: Option<f64>,
    /// `k / (K − 1)`: the coverage of a uniformly random wrong class.
    pub chance_baseline: f64,
}

impl SelectivityReport {
    /// `coverage / chance_baseline`.
    pub fn lift(&self) -> Option<f64> {
        self.coverage.map(|c| c / self.chance_baseline)
    }
}

pub fn selectivity_report(campaign: &CampaignResult, centers: &ClassCenters, k: usize) -> Result<SelectivityReport> {
    let n = centers.num_classes();
    if campaign.num_classes != n {
        return Err(Error::Input(format!("campaign has {} classes, centers have {n}", campaign.num_classes)));
    }
    let mut per_source = Vec::with_capacity(n);
    let (mut total_successes, mut total_hits) = (0, 0);
    for source in 0..n {
        let nearest = nearest_classes(centers, source, k)?;
        let target_histogram = campaign.target_histogram(source);
        let successes: usize = target_histogram.iter().sum();
        let hits: usize = nearest.iter().map(|&(c, _)| target_histogram[c]).sum();
        total_successes += successes;
        total_hits += hits;
        per_source.push(SourceSelectivity {
            source,
            nearest: nearest.into_iter().map(|(class, distance)| Neighbor { class, distance }).collect(),
            target_histogram,
            successes,
            hits,
            coverage: (successes > 0).then(|| hits as f64 / successes as f64),
        });
    }
    Ok(SelectivityReport {
        k,
        num_classes: n,
        per_source,
        total_successes,
        total_hits,
        coverage: (total_successes > 0).then(|| total_hits as f64 / total_successes as f64),
        chance_baseline: k as f64 / (n - 1) as f64,
    })
}
