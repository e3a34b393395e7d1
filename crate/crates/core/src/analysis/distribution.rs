//! Concentration of adversarial classes: normalized entropy and Gini coefficient.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attack::CampaignResult;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisclassDistribution {
    /// Successful adversarial examples per adversarial class.
    pub counts: Vec<usize>,
    pub total: usize,
    /// `H / ln K`; absent when there are no successes.
    pub normalized_entropy: Option<f64>,
    /// Absent when there are no successes.
    pub gini: Option<f64>,
    pub degenerate: bool,
}

pub fn misclass_distribution(campaign: &CampaignResult) -> Result<MisclassDistribution> {
    if campaign.records.is_empty() && campaign.attacked == 0 {
        return Err(Error::Input("campaign is empty".into()));
    }
    Ok(distribution_of(campaign.target_totals()))
}

/// Statistics of an arbitrary count vector.
pub fn distribution_of(counts: Vec<usize>) -> MisclassDistribution {
    let total: usize = counts.iter().sum();
    if total == 0 || counts.len() < 2 {
        return MisclassDistribution { counts, total, normalized_entropy: None, gini: None, degenerate: true };
    }
    MisclassDistribution {
        normalized_entropy: Some(normalized_entropy(&counts)),
        gini: Some(gini(&counts)),
        counts,
        total,
        degenerate: false,
    }
}

/// `−Σ pᵢ ln pᵢ / ln K`.
///
/// Classes sharing a count contribute identical terms, so they are summed as one group
/// `(m·c/N)·ln(N/c)`; the single-class and uniform cases then come out exactly 0 and 1.
pub fn normalized_entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let k = counts.len();
    let mut groups: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in counts.iter().filter(|&&c| c > 0) {
        *groups.entry(c).or_default() += 1;
    }
    if groups.len() == 1 {
        let (_, &m) = groups.iter().next().expect("one group");
        if m == 1 {
            return 0.0;
        }
        if m == k {
            return 1.0;
        }
    }
    let n = total as f64;
    let h: f64 = groups.iter().map(|(&c, &m)| (m * c) as f64 / n * (n / c as f64).ln()).sum();
    (h / (k as f64).ln()).clamp(0.0, 1.0)
}

/// `Σᵢ Σⱼ |cᵢ − cⱼ| / (2 K Σc)`.
pub fn gini(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let k = counts.len();
    let mut num: u128 = 0;
    for &a in counts {
        for &b in counts {
            num += a.abs_diff(b) as u128;
        }
    }
    num as f64 / (2 * k as u128 * total as u128) as f64
}
