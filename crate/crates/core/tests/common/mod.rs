//! Independent oracles shared by the integration suites and the acceptance gate.
#![allow(dead_code)]

use perturbench::analysis::FeatureMatrix;
use perturbench::autodiff::{Graph, NodeId, PoolMode};
use perturbench::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_tensor(r: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

// ---------------------------------------------------------------------------
// Finite-difference gradient oracle

/// A small randomized network exercising a subset of the primitives.
pub struct MicroModel {
    pub kind: usize,
    pub input: Tensor,
    pub params: Vec<Tensor>,
    pub labels: Vec<usize>,
}

pub const MICRO_KINDS: usize = 10;

const CLASSES: usize = 3;

impl MicroModel {
    pub fn random(seed: u64) -> Self {
        let mut r = rng(seed);
        let kind = (seed as usize) % MICRO_KINDS;
        let n = r.random_range(1..=3);
        let c = r.random_range(1..=3);
        // extents for which every strided conv/pool in the variant tiles exactly
        let choices: &[usize] = match kind {
            1 => &[5, 9],
            2 | 8 => &[4, 6],
            6 | 7 => &[5, 7],
            _ => &[4, 5, 6, 7],
        };
        let h = choices[r.random_range(0..choices.len())];
        let w = choices[r.random_range(0..choices.len())];
        let k = r.random_range(2..=3);
        let input = uniform_tensor(&mut r, vec![n, c, h, w], 0.0, 1.0);
        let labels = (0..n).map(|_| r.random_range(0..CLASSES)).collect();
        let mut shapes: Vec<Vec<usize>> = Vec::new();
        let conv = |shapes: &mut Vec<Vec<usize>>, out: usize, cin: usize, kh: usize| {
            shapes.push(vec![out, cin, kh, kh]);
            shapes.push(vec![out]);
        };
        let dense = |shapes: &mut Vec<Vec<usize>>, d: usize, m: usize| {
            shapes.push(vec![d, m]);
            shapes.push(vec![m]);
        };
        let flat = |ch: usize, hh: usize, ww: usize| ch * hh * ww;
        match kind {
            0 => {
                conv(&mut shapes, k, c, 3);
                dense(&mut shapes, flat(k, h, w), CLASSES);
            }
            1 => {
                conv(&mut shapes, k, c, 3);
                let (oh, ow) = ((h - 3) / 2 + 1, (w - 3) / 2 + 1);
                dense(&mut shapes, flat(k, oh / 2, ow / 2), CLASSES);
            }
            2 => {
                conv(&mut shapes, k, c, 3);
                dense(&mut shapes, k, CLASSES);
            }
            3 => {
                conv(&mut shapes, k, c, 1);
                conv(&mut shapes, 2, c, 3);
                dense(&mut shapes, k + 2, CLASSES);
            }
            4 => {
                conv(&mut shapes, k, c, 3);
                conv(&mut shapes, k, k, 3);
                dense(&mut shapes, flat(k, h, w), CLASSES);
            }
            5 => {
                dense(&mut shapes, flat(c, h, w), 4);
                dense(&mut shapes, 4, CLASSES);
            }
            6 => {
                conv(&mut shapes, k, c, 3);
                dense(&mut shapes, flat(k, (h - 5) / 2 + 1, (w - 5) / 2 + 1), CLASSES);
                dense(&mut shapes, k, CLASSES);
            }
            7 => {
                conv(&mut shapes, k, c, 3);
                let (oh, ow) = ((h + 4 - 3) / 2 + 1, (w + 4 - 3) / 2 + 1);
                dense(&mut shapes, flat(k, oh - 1, ow - 1), CLASSES);
            }
            8 => {
                conv(&mut shapes, k, c, 1);
                dense(&mut shapes, k + c, CLASSES);
            }
            _ => {
                dense(&mut shapes, flat(c, h, w), CLASSES);
                dense(&mut shapes, flat(c, h, w), CLASSES);
            }
        }
        let params = shapes
            .into_iter()
            .map(|s| {
                let fan: usize = s.iter().skip(1).product::<usize>().max(1);
                let scale = 1.5 / (fan as f64).sqrt();
                uniform_tensor(&mut r, s, -scale, scale)
            })
            .collect();
        Self { kind, input, params, labels }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Records the forward pass; every leaf is a variable.
    pub fn forward(&self, input: &Tensor, params: &[Tensor]) -> (Graph, NodeId, Vec<NodeId>, NodeId) {
        let mut g = Graph::new();
        let x = g.variable(input.clone());
        let p: Vec<NodeId> = params.iter().map(|t| g.variable(t.clone())).collect();
        let y = &self.labels;
        let loss = match self.kind {
            0 => {
                let a = g.conv2d(x, p[0], p[1], 1, 1).unwrap();
                let a = g.relu(a).unwrap();
                let f = g.flatten(a).unwrap();
                let z = g.dense(f, p[2], p[3]).unwrap();
                g.softmax_cross_entropy(z, y).unwrap()
            }
            1 => {
                let a = g.conv2d(x, p[0], p[1], 2, 0).unwrap();
                let a = g.pool2d(a, PoolMode::Max, 2, 2).unwrap();
                let f = g.flatten(a).unwrap();
                let z = g.dense(f, p[2], p[3]).unwrap();
                g.softmax_cross_entropy(z, y).unwrap()
            }
            2 => {
                let a = g.conv2d(x, p[0], p[1], 1, 1).unwrap();
                let a = g.pool2d(a, PoolMode::Average, 2, 2).unwrap();
                let f = g.global_avg_pool(a).unwrap();
                let z = g.dense(f, p[2], p[3]).unwrap();
                g.softmax_cross_entropy(z, y).unwrap()
            }
            3 => {
                let a = g.conv2d(x, p[0], p[1], 1, 0).unwrap();
                let b = g.conv2d(x, p[2], p[3], 1, 1).unwrap();
                let cat = g.concat(&[a, b]).unwrap();
                let cat = g.relu(cat).unwrap();
                let f = g.global_avg_pool(cat).unwrap();
                let z = g.dense(f, p[4], p[5]).unwrap();
                g.softmax_cross_entropy(z, y).unwrap()
            }
            4 => {
                let a = g.conv2d(x, p[0], p[1], 1, 1).unwrap();
                let a = g.relu(a).unwrap();
                let b = g.conv2d(a, p[2], p[3], 1, 1).unwrap();
                let s = g.add(a, b).unwrap();
                let s = g.relu(s).unwrap();
                let f = g.flatten(s).unwrap();
                let z = g.dense(f, p[4], p[5]).unwrap();
                g.softmax_cross_entropy(z, y).unwrap()
            }
            5 => {
                let f = g.flatten(x).unwrap();
                let h = g.dense(f, p[0], p[1]).unwrap();
                let h = g.relu(h).unwrap();
                let z = g.dense(h, p[2], p[3]).unwrap();
                g.softmax_cross_entropy(z, y).unwrap()
            }
            6 => {
                let a = g.conv2d(x, p[0], p[1], 1, 0).unwrap();
                let m = g.pool2d(a, PoolMode::Max, 3, 2).unwrap();
                let f = g.flatten(m).unwrap();
                let z = g.dense(f, p[2], p[3]).unwrap();
                let main = g.softmax_cross_entropy(z, y).unwrap();
                let gap = g.global_avg_pool(a).unwrap();
                let za = g.dense(gap, p[4], p[5]).unwrap();
                let aux = g.softmax_cross_entropy(za, y).unwrap();
                g.weighted_sum(&[(main, 1.0), (aux, 0.3)]).unwrap()
            }
            7 => {
                let a = g.conv2d(x, p[0], p[1], 2, 2).unwrap();
                let a = g.relu(a).unwrap();
                let a = g.pool2d(a, PoolMode::Average, 2, 1).unwrap();
                let f = g.flatten(a).unwrap();
                let z = g.dense(f, p[2], p[3]).unwrap();
                g.softmax_cross_entropy(z, y).unwrap()
            }
            8 => {
                let a = g.conv2d(x, p[0], p[1], 1, 0).unwrap();
                let cat = g.concat(&[a, x]).unwrap();
                let m = g.pool2d(cat, PoolMode::Max, 2, 2).unwrap();
                let f = g.global_avg_pool(m).unwrap();
                let z = g.dense(f, p[2], p[3]).unwrap();
                g.softmax_cross_entropy(z, y).unwrap()
            }
            _ => {
                let f = g.flatten(x).unwrap();
                let z1 = g.dense(f, p[0], p[1]).unwrap();
                let z2 = g.dense(f, p[2], p[3]).unwrap();
                let l1 = g.softmax_cross_entropy(z1, y).unwrap();
                let l2 = g.softmax_cross_entropy(z2, y).unwrap();
                g.weighted_sum(&[(l1, 0.7), (l2, -0.4)]).unwrap()
            }
        };
        (g, x, p, loss)
    }

    pub fn loss(&self, input: &Tensor, params: &[Tensor]) -> f64 {
        let (g, _, _, loss) = self.forward(input, params);
        g.value(loss).data()[0]
    }
}

/// `|a − n| / max(|a|, |n|, 1e-6)`; the floor keeps exactly-zero adjoints from dividing
/// finite-difference round-off by zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Max relative error over every parameter and input coordinate, central differences with `h`.
pub fn gradient_check(m: &MicroModel, h: f64) -> f64 {
    let (g, x, p, loss) = m.forward(&m.input, &m.params);
    let grads = g.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    let dx = grads.get(x).unwrap().to_vec();
    for i in 0..m.input.len() {
        let mut plus = m.input.clone();
        plus.data_mut()[i] += h;
        let mut minus = m.input.clone();
        minus.data_mut()[i] -= h;
        let num = (m.loss(&plus, &m.params) - m.loss(&minus, &m.params)) / (2.0 * h);
        worst = worst.max(relative_error(dx[i], num));
    }
    for (k, id) in p.iter().enumerate() {
        let dp = grads.get(*id).unwrap().to_vec();
        for i in 0..m.params[k].len() {
            let mut plus = m.params.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = m.params.clone();
            minus[k].data_mut()[i] -= h;
            let num = (m.loss(&m.input, &plus) - m.loss(&m.input, &minus)) / (2.0 * h);
            worst = worst.max(relative_error(dp[i], num));
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Direct convolution oracle

/// Six nested loops over (sample, out-channel, row, col, in-channel, kernel tap).
pub fn conv_direct(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (k, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * k * oh * ow];
    for s in 0..n {
        for o in 0..k {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b.data()[o];
                    for ch in 0..c {
                        for u in 0..kh {
                            for v in 0..kw {
                                let yy = (i * stride + u) as isize - pad as isize;
                                let xx = (j * stride + v) as isize - pad as isize;
                                if yy < 0 || xx < 0 || yy >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((s * c + ch) * h + yy as usize) * wd + xx as usize];
                                acc += xv * w.data()[((o * c + ch) * kh + u) * kw + v];
                            }
                        }
                    }
                    out[((s * k + o) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, k, oh, ow], out).unwrap()
}

/// One randomized case; returns the max absolute deviation from the direct oracle.
pub fn conv_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(1..=3);
    let c = r.random_range(1..=4);
    let k = r.random_range(1..=5);
    let kh = r.random_range(1..=4);
    let kw = r.random_range(1..=4);
    let stride = r.random_range(1..=3);
    let pad = r.random_range(0..=2);
    // extents bumped so (extent + 2·pad − kernel) is a multiple of the stride
    let fit = |r: &mut ChaCha8Rng, kernel: usize| {
        let mut e = r.random_range(kernel.saturating_sub(2 * pad).max(1)..=9);
        let rem = (e + 2 * pad - kernel) % stride;
        if rem != 0 {
            e += stride - rem;
        }
        e
    };
    let h = fit(&mut r, kh);
    let w = fit(&mut r, kw);
    let x = uniform_tensor(&mut r, vec![n, c, h, w], -1.0, 1.0);
    let wt = uniform_tensor(&mut r, vec![k, c, kh, kw], -1.0, 1.0);
    let b = uniform_tensor(&mut r, vec![k], -1.0, 1.0);
    let want = conv_direct(&x, &wt, &b, stride, pad);
    let mut g = Graph::new();
    let (xi, wi, bi) = (g.constant(x), g.constant(wt), g.constant(b));
    let y = g.conv2d(xi, wi, bi, stride, pad).unwrap_or_else(|e| panic!("case {seed}: {e}"));
    let got = g.value(y);
    assert_eq!(got.shape(), want.shape(), "case {seed}");
    got.data().iter().zip(want.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Dense symmetric eigensolver oracle

/// Cyclic Jacobi rotations; returns eigenvalues sorted descending.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Sample covariance (divisor `n − 1`) of the rows.
pub fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut c = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                c[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    c.iter_mut().flatten().for_each(|v| *v /= (n - 1) as f64);
    c
}

pub fn random_rows(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    // anisotropic so the spectrum is well separated
    (0..n).map(|_| (0..d).map(|j| r.random_range(-1.0..1.0) * (d - j) as f64).collect()).collect()
}

// ---------------------------------------------------------------------------
// Clustering quality

/// Mean silhouette coefficient of `points` (row-major, `dims` wide).
pub fn silhouette(points: &[f64], dims: usize, labels: &[usize]) -> f64 {
    let n = labels.len();
    let k = labels.iter().max().unwrap() + 1;
    let dist = |i: usize, j: usize| -> f64 {
        (0..dims).map(|d| (points[i * dims + d] - points[j * dims + d]).powi(2)).sum::<f64>().sqrt()
    };
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if i != j {
                sums[labels[j]] += dist(i, j);
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k).filter(|&c| c != own && counts[c] > 0).map(|c| sums[c] / counts[c] as f64).fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / n as f64
}

/// Two isotropic Gaussian blobs, `per` points each, centers `separation` σ apart.
pub fn two_blobs(seed: u64, per: usize, dims: usize, separation: f64) -> FeatureMatrix {
    let mut r = rng(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for blob in 0..2 {
        for _ in 0..per {
            let row = (0..dims)
                .map(|d| normal.sample(&mut r) + if d == 0 && blob == 1 { separation } else { 0.0 })
                .collect();
            rows.push(row);
            labels.push(blob);
        }
    }
    FeatureMatrix::new(rows, labels).unwrap()
}
