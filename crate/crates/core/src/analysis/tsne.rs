//! Exact O(n²) t-SNE.
//!
//! Per-point Gaussian bandwidths are found by bisection on the precision so
//! that each conditional distribution has the requested perplexity. The
//! symmetrized joint `P` is matched by a Student-t `Q` in two dimensions via
//! gradient descent with momentum, per-coordinate gains and early
//! exaggeration. Initialization is the PCA projection scaled to a standard
//! deviation of 1e-4.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::embedding::{Embedding, EmbeddingMethod};
use super::features::{sq_dist, FeatureMatrix};
use super::pca::pca;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TsneInit {
    Pca,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub seed: u64,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_exag")]
    pub early_exaggeration: f64,
    #[serde(default = "d_exag_iters")]
    pub exaggeration_iterations: usize,
    #[serde(default = "d_m0")]
    pub initial_momentum: f64,
    #[serde(default = "d_m1")]
    pub final_momentum: f64,
    #[serde(default = "d_switch")]
    pub momentum_switch: usize,
    #[serde(default = "d_init")]
    pub init: TsneInit,
}

fn d_lr() -> f64 {
    100.0
}
fn d_exag() -> f64 {
    12.0
}
fn d_exag_iters() -> usize {
    100
}
fn d_m0() -> f64 {
    0.5
}
fn d_m1() -> f64 {
    0.8
}
fn d_switch() -> usize {
    250
}
fn d_init() -> TsneInit {
    TsneInit::Pca
}

impl TsneParams {
    pub fn new(perplexity: f64, iterations: usize, seed: u64) -> Self {
        Self {
            perplexity,
            iterations,
            seed,
            learning_rate: d_lr(),
            early_exaggeration: d_exag(),
            exaggeration_iterations: d_exag_iters(),
            initial_momentum: d_m0(),
            final_momentum: d_m1(),
            momentum_switch: d_switch(),
            init: d_init(),
        }
    }
}

impl Default for TsneParams {
    fn default() -> Self {
        Self::new(15.0, 500, 0)
    }
}

fn check_perplexity(n: usize, perplexity: f64) -> Result<()> {
    if n < 10 {
        return Err(Error::config("n", format!("t-SNE needs at least 10 points, got {n}")));
    }
    let max = (n - 1) as f64 / 3.0;
    if !(3.0..=max).contains(&perplexity) {
        return Err(Error::config("perplexity", format!("{perplexity} outside [3, (n-1)/3 = {max:.3}] for n = {n}")));
    }
    Ok(())
}

/// Symmetric joint probabilities (row-major `n × n`, zero diagonal, summing to 1) and the
/// effective perplexity `exp(H(P_i))` reached for each conditional before symmetrization.
pub fn joint_probabilities(features: &FeatureMatrix, perplexity: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = features.rows();
    check_perplexity(n, perplexity)?;
    let mut dist = vec![0.0; n * n];
    let mut any_nonzero = false;
    for i in 0..n {
        for j in i + 1..n {
            let d = sq_dist(features.row(i), features.row(j));
            dist[i * n + j] = d;
            dist[j * n + i] = d;
            any_nonzero |= d > 0.0;
        }
    }
    if !any_nonzero {
        return Err(Error::Degenerate("all feature rows are identical".into()));
    }
    let target = perplexity.ln();
    let mut cond = vec![0.0; n * n];
    let mut effective = Vec::with_capacity(n);
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        let d_min = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(f64::INFINITY, f64::min);
        let out = &mut cond[i * n..(i + 1) * n];
        let mut beta = 1.0;
        let mut lo = 0.0;
        let mut hi = f64::INFINITY;
        let mut entropy = 0.0;
        for _ in 0..200 {
            entropy = conditional_row(row, i, d_min, beta, out);
            let diff = entropy - target;
            if diff.abs() < 1e-10 {
                break;
            }
            if diff > 0.0 {
                // too flat: sharpen
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
        effective.push(entropy.exp());
    }
    let mut p = vec![0.0; n * n];
    let scale = 1.0 / (2.0 * n as f64);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) * scale;
            }
        }
    }
    Ok((p, effective))
}

/// Fills `out` with `p_{j|i}` at precision `beta`; returns the Shannon entropy (nats).
fn conditional_row(dist: &[f64], i: usize, d_min: f64, beta: f64, out: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    for (j, (o, &d)) in out.iter_mut().zip(dist).enumerate() {
        *o = if j == i { 0.0 } else { (-beta * (d - d_min)).exp() };
        sum += *o;
    }
    let mut weighted = 0.0;
    for (o, &d) in out.iter_mut().zip(dist) {
        weighted += *o * (d - d_min);
        *o /= sum;
    }
    // H = ln Σ + β·E[d − d_min]
    sum.ln() + beta * weighted / sum
}

pub fn tsne_embed(features: &FeatureMatrix, params: &TsneParams) -> Result<Embedding> {
    let n = features.rows();
    if params.iterations == 0 {
        return Err(Error::config("iterations", "must be at least 1"));
    }
    if params.learning_rate.is_nan() || params.learning_rate <= 0.0 {
        return Err(Error::config("learning_rate", "must be positive"));
    }
    let (p, _) = joint_probabilities(features, params.perplexity)?;
    let mut y = initial_layout(features, params)?;

    let mut update = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; 2 * n];
    for iter in 0..params.iterations {
        let exaggeration = if iter < params.exaggeration_iterations { params.early_exaggeration } else { 1.0 };
        let momentum = if iter < params.momentum_switch { params.initial_momentum } else { params.final_momentum };
        let z = student_t(&y, n, &mut num);
        grad.fill(0.0);
        for i in 0..n {
            let (yi0, yi1) = (y[2 * i], y[2 * i + 1]);
            let (mut g0, mut g1) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let m = (exaggeration * p[i * n + j] - w / z) * w;
                g0 += m * (yi0 - y[2 * j]);
                g1 += m * (yi1 - y[2 * j + 1]);
            }
            grad[2 * i] = 4.0 * g0;
            grad[2 * i + 1] = 4.0 * g1;
        }
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (update[k] > 0.0) { gains[k] + 0.2 } else { gains[k] * 0.8 };
            gains[k] = gains[k].max(0.01);
            update[k] = momentum * update[k] - params.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        center(&mut y, n);
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("t-SNE optimization produced non-finite coordinates".into()));
    }
    let z = student_t(&y, n, &mut num);
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p[i * n + j];
            if i != j && pij > 0.0 {
                kl += pij * (pij / (num[i * n + j] / z)).ln();
            }
        }
    }
    Ok(Embedding {
        method: EmbeddingMethod::Tsne { perplexity: params.perplexity, iterations: params.iterations, seed: params.seed },
        dims: 2,
        coords: y,
        kl_divergence: Some(kl),
    })
}

/// Fills `num` with `1 / (1 + ‖yᵢ − yⱼ‖²)` (zero diagonal) and returns its sum.
fn student_t(y: &[f64], n: usize, num: &mut [f64]) -> f64 {
    let mut z = 0.0;
    for i in 0..n {
        num[i * n + i] = 0.0;
        for j in i + 1..n {
            let dx = y[2 * i] - y[2 * j];
            let dy = y[2 * i + 1] - y[2 * j + 1];
            let w = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = w;
            num[j * n + i] = w;
            z += 2.0 * w;
        }
    }
    z
}

fn center(y: &mut [f64], n: usize) {
    for d in 0..2 {
        let mean = (0..n).map(|i| y[2 * i + d]).sum::<f64>() / n as f64;
        (0..n).for_each(|i| y[2 * i + d] -= mean);
    }
}

fn initial_layout(features: &FeatureMatrix, params: &TsneParams) -> Result<Vec<f64>> {
    let n = features.rows();
    let from_pca = match params.init {
        TsneInit::Pca if features.width() >= 2 => Some(pca(features, 2)?.embedding.coords),
        _ => None,
    };
    let mut y = match from_pca {
        Some(c) => c,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            (0..2 * n).map(|_| normal.sample(&mut rng)).collect()
        }
    };
    let mean = (0..n).map(|i| y[2 * i]).sum::<f64>() / n as f64;
    let sd = ((0..n).map(|i| (y[2 * i] - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    if sd > 0.0 {
        let s = 1e-4 / sd;
        y.iter_mut().for_each(|v| *v *= s);
    }
    Ok(y)
}
