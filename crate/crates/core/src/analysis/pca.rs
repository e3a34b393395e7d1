//! Principal component analysis.
//!
//! When there are fewer rows than features the eigenproblem is solved on the
//! `n × n` Gram matrix instead of the `D × D` covariance; both share their
//! non-zero spectrum, and directions are recovered as `Xcᵀu / √((n−1)λ)`.

use nalgebra::{DMatrix, SymmetricEigen};

use super::embedding::{Embedding, EmbeddingMethod};
use super::features::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit principal directions, one row per component.
    pub directions: Vec<Vec<f64>>,
    /// Sample variance (divisor `n − 1`) along each direction, non-increasing.
    pub variances: Vec<f64>,
    pub embedding: Embedding,
}

pub fn pca(features: &FeatureMatrix, components: usize) -> Result<Pca> {
    let n = features.rows();
    let d = features.width();
    if n < 2 {
        return Err(Error::Input(format!("PCA needs at least 2 rows, got {n}")));
    }
    if components == 0 || components > (n - 1).min(d) {
        return Err(Error::config("components", format!("{components} not in [1, min(n-1, D) = {}]", (n - 1).min(d))));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        mean.iter_mut().zip(features.row(i)).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| features.row(i)[j] - mean[j]);
    if centered.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("all feature rows are identical".into()));
    }
    let denom = (n - 1) as f64;

    let (values, directions) = if d <= n {
        let cov = centered.transpose() * &centered / denom;
        let eig = SymmetricEigen::new(cov);
        let order = descending(eig.eigenvalues.as_slice());
        let dirs = order[..components].iter().map(|&c| eig.eigenvectors.column(c).iter().copied().collect()).collect();
        (order[..components].iter().map(|&c| eig.eigenvalues[c].max(0.0)).collect::<Vec<_>>(), dirs)
    } else {
        let gram = &centered * centered.transpose() / denom;
        let eig = SymmetricEigen::new(gram);
        let order = descending(eig.eigenvalues.as_slice());
        let top = eig.eigenvalues[order[0]];
        let mut dirs = Vec::with_capacity(components);
        let mut vals = Vec::with_capacity(components);
        for &c in &order[..components] {
            let lambda = eig.eigenvalues[c];
            if lambda <= top * 1e-12 {
                return Err(Error::Degenerate(format!("only {} non-degenerate components available", dirs.len())));
            }
            let v = centered.transpose() * eig.eigenvectors.column(c) / (denom * lambda).sqrt();
            dirs.push(v.iter().copied().collect::<Vec<f64>>());
            vals.push(lambda);
        }
        (vals, dirs)
    };

    let directions: Vec<Vec<f64>> = directions.into_iter().map(canonical_sign).collect();
    let mut coords = Vec::with_capacity(n * components);
    for i in 0..n {
        let row = centered.row(i);
        for dir in &directions {
            coords.push(row.iter().zip(dir).map(|(a, b)| a * b).sum());
        }
    }
    Ok(Pca {
        mean,
        directions,
        variances: values,
        embedding: Embedding { method: EmbeddingMethod::Pca { components }, dims: components, coords, kl_divergence: None },
    })
}

/// Mean-centered projection onto the top `components` principal directions.
pub fn pca_embed(features: &FeatureMatrix, components: usize) -> Result<Embedding> {
    pca(features, components).map(|p| p.embedding)
}

fn descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
fn canonical_sign(mut v: Vec<f64>) -> Vec<f64> {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}
