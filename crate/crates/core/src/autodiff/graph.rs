//! Tensor-level reverse-mode tape.
//!
//! A [`Graph`] records every primitive applied during one forward pass,
//! together with whatever activations its adjoint needs. Node ids are handed
//! out in creation order, so the node list is already topologically sorted
//! and [`Graph::backward`] replays adjoints by walking it in reverse.

use serde::{Deserialize, Serialize};

use super::kernels::{col2im, gemm_nn, gemm_nt, gemm_tn, im2col, ConvGeometry};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Max,
    Average,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: NodeId, kernel: NodeId, bias: NodeId, geometry: ConvGeometry, cols: Vec<f64> },
    Pool { input: NodeId, mode: PoolMode, window: usize, stride: usize, argmax: Vec<usize> },
    GlobalAvgPool { input: NodeId },
    Dense { input: NodeId, weight: NodeId, bias: NodeId },
    Relu { input: NodeId },
    Concat { inputs: Vec<NodeId> },
    Add { a: NodeId, b: NodeId },
    Flatten { input: NodeId },
    SoftmaxCrossEntropy { logits: NodeId, labels: Vec<usize>, probs: Tensor },
    WeightedSum { terms: Vec<(NodeId, f64)> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation record for one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `id`; `None` if the node does not require gradients.
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Vec<f64>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant leaf: no gradient is accumulated for it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf (a parameter, or an input being attacked).
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Softmax probabilities saved by a cross-entropy node.
    pub fn probabilities(&self, loss: NodeId) -> Option<&Tensor> {
        match &self.nodes.get(loss.0)?.op {
            Op::SoftmaxCrossEntropy { probs, .. } => Some(probs),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<&Node> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| Error::State(format!("node {} is not part of this record", id.0)))
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Cross-correlation of `[N,C,H,W]` input with `[K,C,kh,kw]` kernel plus per-channel bias.
    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, bias: NodeId, stride: usize, padding: usize) -> Result<NodeId> {
        let x = &self.check(input)?.value;
        let w = &self.check(kernel)?.value;
        let b = &self.check(bias)?.value;
        if x.rank() != 4 || w.rank() != 4 {
            return Err(Error::dim("conv2d", format!("input {:?} and kernel {:?} must be rank 4", x.shape(), w.shape())));
        }
        let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (k, kc, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        if kc != c {
            return Err(Error::dim("conv2d", format!("kernel channel axis (1) is {kc} but input channel axis (1) is {c}")));
        }
        if b.shape() != [k] {
            return Err(Error::dim("conv2d", format!("bias shape {:?} must be [{k}] (kernel axis 0)", b.shape())));
        }
        if stride == 0 {
            return Err(Error::config("stride", "must be positive"));
        }
        let out_h = out_extent(h, kh, stride, padding, "height")?;
        let out_w = out_extent(wd, kw, stride, padding, "width")?;
        let g = ConvGeometry {
            channels: c,
            height: h,
            width: wd,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h,
            out_w,
        };
        let patch = g.patch_len();
        let pixels = g.out_pixels();
        let mut cols = vec![0.0; n * patch * pixels];
        let mut out = vec![0.0; n * k * pixels];
        for s in 0..n {
            let col = &mut cols[s * patch * pixels..(s + 1) * patch * pixels];
            im2col(&x.data()[s * c * h * wd..(s + 1) * c * h * wd], &g, col);
            let o = &mut out[s * k * pixels..(s + 1) * k * pixels];
            for (kk, &bias_k) in b.data().iter().enumerate() {
                o[kk * pixels..(kk + 1) * pixels].fill(bias_k);
            }
            gemm_nn(w.data(), col, o, k, patch, pixels);
        }
        let value = Tensor::new(vec![n, k, out_h, out_w], out)?;
        let rg = self.needs(&[input, kernel, bias]);
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, geometry: g, cols }, rg))
    }

    /// Max or average pooling over `window × window` tiles.
    pub fn pool2d(&mut self, input: NodeId, mode: PoolMode, window: usize, stride: usize) -> Result<NodeId> {
        let x = &self.check(input)?.value;
        if x.rank() != 4 {
            return Err(Error::dim("pool2d", format!("input {:?} must be rank 4", x.shape())));
        }
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        if window == 0 || stride == 0 {
            return Err(Error::config("window", "window and stride must be positive"));
        }
        if window > h || window > w {
            return Err(Error::config("window", format!("window {window} exceeds spatial extent {h}x{w}")));
        }
        let oh = (h - window) / stride + 1;
        let ow = (w - window) / stride + 1;
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::new();
        let inv = 1.0 / (window * window) as f64;
        for plane in x.data().chunks_exact(h * w) {
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y0, x0) = (oy * stride, ox * stride);
                    match mode {
                        PoolMode::Max => {
                            let mut best = y0 * w + x0;
                            for dy in 0..window {
                                for dx in 0..window {
                                    let idx = (y0 + dy) * w + x0 + dx;
                                    // strict comparison keeps the first row-major maximum
                                    if plane[idx] > plane[best] {
                                        best = idx;
                                    }
                                }
                            }
                            out.push(plane[best]);
                            argmax.push(best);
                        }
                        PoolMode::Average => {
                            let mut sum = 0.0;
                            for dy in 0..window {
                                for dx in 0..window {
                                    sum += plane[(y0 + dy) * w + x0 + dx];
                                }
                            }
                            out.push(sum * inv);
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        let rg = self.needs(&[input]);
        Ok(self.push(value, Op::Pool { input, mode, window, stride, argmax }, rg))
    }

    /// `[N,C,H,W] → [N,C]` spatial mean.
    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let x = &self.check(input)?.value;
        if x.rank() != 4 {
            return Err(Error::dim("global_avg_pool", format!("input {:?} must be rank 4", x.shape())));
        }
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let inv = 1.0 / (h * w) as f64;
        let out = x.data().chunks_exact(h * w).map(|p| p.iter().sum::<f64>() * inv).collect();
        let value = Tensor::new(vec![n, c], out)?;
        let rg = self.needs(&[input]);
        Ok(self.push(value, Op::GlobalAvgPool { input }, rg))
    }

    /// `input[N,D] · weight[D,M] + bias[M]`.
    pub fn dense(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let x = &self.check(input)?.value;
        let w = &self.check(weight)?.value;
        let b = &self.check(bias)?.value;
        if x.rank() != 2 || w.rank() != 2 {
            return Err(Error::dim("dense_affine", format!("input {:?} and weight {:?} must be rank 2", x.shape(), w.shape())));
        }
        let (n, d) = (x.shape()[0], x.shape()[1]);
        let (wd, m) = (w.shape()[0], w.shape()[1]);
        if d != wd {
            return Err(Error::dim("dense_affine", format!("input axis 1 is {d} but weight axis 0 is {wd}")));
        }
        if b.shape() != [m] {
            return Err(Error::dim("dense_affine", format!("bias shape {:?} must be [{m}]", b.shape())));
        }
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(b.data());
        }
        gemm_nn(x.data(), w.data(), &mut out, n, d, m);
        let value = Tensor::new(vec![n, m], out)?;
        let rg = self.needs(&[input, weight, bias]);
        Ok(self.push(value, Op::Dense { input, weight, bias }, rg))
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        let x = &self.check(input)?.value;
        let out = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.needs(&[input]);
        Ok(self.push(value, Op::Relu { input }, rg))
    }

    /// Concatenates along the channel axis in argument order.
    pub fn concat(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let first = &self.check(*inputs.first().ok_or_else(|| Error::Input("concat of zero inputs".into()))?)?.value;
        if first.rank() < 2 {
            return Err(Error::dim("branch_concat", format!("input {:?} has no channel axis", first.shape())));
        }
        let n = first.shape()[0];
        let spatial = first.shape()[2..].to_vec();
        let mut channels = 0;
        for &id in inputs {
            let t = &self.check(id)?.value;
            if t.rank() != first.rank() || t.shape()[0] != n || t.shape()[2..] != spatial[..] {
                return Err(Error::dim(
                    "branch_concat",
                    format!("input {:?} disagrees with {:?} outside the channel axis", t.shape(), first.shape()),
                ));
            }
            channels += t.shape()[1];
        }
        let inner: usize = spatial.iter().product();
        let mut out = Vec::with_capacity(n * channels * inner);
        for s in 0..n {
            for &id in inputs {
                let t = &self.nodes[id.0].value;
                let block = t.shape()[1] * inner;
                out.extend_from_slice(&t.data()[s * block..(s + 1) * block]);
            }
        }
        let mut shape = vec![n, channels];
        shape.extend(spatial);
        let value = Tensor::new(shape, out)?;
        let rg = self.needs(inputs);
        Ok(self.push(value, Op::Concat { inputs: inputs.to_vec() }, rg))
    }

    /// Elementwise sum of identically shaped operands (the residual shortcut).
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let x = &self.check(a)?.value;
        let y = &self.check(b)?.value;
        if x.shape() != y.shape() {
            return Err(Error::dim("residual_add", format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let out = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    /// `[N, ...] → [N, prod(...)]`.
    pub fn flatten(&mut self, input: NodeId) -> Result<NodeId> {
        let x = &self.check(input)?.value;
        let n = x.shape()[0];
        let value = x.clone().reshape(vec![n, x.len() / n])?;
        let rg = self.needs(&[input]);
        Ok(self.push(value, Op::Flatten { input }, rg))
    }

    /// Mean cross-entropy of row-max-stabilized softmax; the result is a one-element loss node.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let z = &self.check(logits)?.value;
        if z.rank() != 2 {
            return Err(Error::dim("softmax_cross_entropy", format!("logits {:?} must be rank 2", z.shape())));
        }
        let (n, k) = (z.shape()[0], z.shape()[1]);
        if labels.len() != n {
            return Err(Error::dim("softmax_cross_entropy", format!("{} labels for {n} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Input(format!("label {bad} outside [0, {k})")));
        }
        let (probs, log_norms) = softmax_rows(z.data(), n, k);
        let loss = (0..n)
            .map(|r| log_norms[r] - z.data()[r * k + labels[r]])
            .sum::<f64>()
            / n as f64;
        let probs = Tensor::new(vec![n, k], probs)?;
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec(), probs },
            rg,
        ))
    }

    /// `Σ weight_i · term_i` over one-element nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let mut total = 0.0;
        for &(id, w) in terms {
            let t = &self.check(id)?.value;
            if t.len() != 1 {
                return Err(Error::dim("weighted_sum", format!("term {:?} is not a scalar", t.shape())));
            }
            total += w * t.data()[0];
        }
        let ids: Vec<NodeId> = terms.iter().map(|t| t.0).collect();
        let rg = self.needs(&ids);
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum { terms: terms.to_vec() }, rg))
    }

    /// Replays adjoints from the scalar `loss` node, consuming the record.
    pub fn backward(self, loss: NodeId) -> Result<Gradients> {
        let node = self.check(loss)?;
        if matches!(node.op, Op::Leaf) {
            return Err(Error::State("backward called without a recorded forward pass".into()));
        }
        if node.value.len() != 1 {
            return Err(Error::State(format!("backward needs a scalar loss, got shape {:?}", node.value.shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else { continue };
            self.propagate(node, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }
        // Drop adjoints of nodes that do not require them.
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |id: NodeId| nodes[id.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, geometry: g, cols } => {
                let w = &nodes[kernel.0].value;
                let k = w.shape()[0];
                let n = node.value.shape()[0];
                let patch = g.patch_len();
                let pixels = g.out_pixels();
                let image = g.channels * g.height * g.width;
                if wants(*bias) {
                    let db = acc(grads, *bias, k);
                    for s in 0..n {
                        for (kk, d) in db.iter_mut().enumerate() {
                            let base = (s * k + kk) * pixels;
                            *d += up[base..base + pixels].iter().sum::<f64>();
                        }
                    }
                }
                if wants(*kernel) {
                    let dw = acc(grads, *kernel, k * patch);
                    for s in 0..n {
                        gemm_nt(
                            &up[s * k * pixels..(s + 1) * k * pixels],
                            &cols[s * patch * pixels..(s + 1) * patch * pixels],
                            dw,
                            k,
                            pixels,
                            patch,
                        );
                    }
                }
                if wants(*input) {
                    let dx = acc(grads, *input, n * image);
                    let mut dcols = vec![0.0; patch * pixels];
                    for s in 0..n {
                        dcols.fill(0.0);
                        gemm_tn(w.data(), &up[s * k * pixels..(s + 1) * k * pixels], &mut dcols, patch, k, pixels);
                        col2im(&dcols, g, &mut dx[s * image..(s + 1) * image]);
                    }
                }
            }
            Op::Pool { input, mode, window, stride, argmax } => {
                if !wants(*input) {
                    return;
                }
                let xs = nodes[input.0].value.shape();
                let (h, w) = (xs[2], xs[3]);
                let (oh, ow) = (node.value.shape()[2], node.value.shape()[3]);
                let dx = acc(grads, *input, nodes[input.0].value.len());
                let inv = 1.0 / (window * window) as f64;
                for (p, (dplane, uplane)) in dx.chunks_exact_mut(h * w).zip(up.chunks_exact(oh * ow)).enumerate() {
                    match mode {
                        PoolMode::Max => {
                            for (o, &u) in uplane.iter().enumerate() {
                                dplane[argmax[p * oh * ow + o]] += u;
                            }
                        }
                        PoolMode::Average => {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let share = uplane[oy * ow + ox] * inv;
                                    for dy in 0..*window {
                                        for dxx in 0..*window {
                                            dplane[(oy * stride + dy) * w + ox * stride + dxx] += share;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::GlobalAvgPool { input } => {
                if !wants(*input) {
                    return;
                }
                let xs = nodes[input.0].value.shape();
                let area = xs[2] * xs[3];
                let inv = 1.0 / area as f64;
                let dx = acc(grads, *input, nodes[input.0].value.len());
                for (plane, &u) in dx.chunks_exact_mut(area).zip(up) {
                    let share = u * inv;
                    plane.iter_mut().for_each(|d| *d += share);
                }
            }
            Op::Dense { input, weight, bias } => {
                let x = &nodes[input.0].value;
                let w = &nodes[weight.0].value;
                let (n, d) = (x.shape()[0], x.shape()[1]);
                let m = w.shape()[1];
                if wants(*bias) {
                    let db = acc(grads, *bias, m);
                    for row in up.chunks_exact(m) {
                        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                }
                if wants(*weight) {
                    let dw = acc(grads, *weight, d * m);
                    gemm_tn(x.data(), up, dw, d, n, m);
                }
                if wants(*input) {
                    let dx = acc(grads, *input, n * d);
                    gemm_nt(up, w.data(), dx, n, m, d);
                }
            }
            Op::Relu { input } => {
                if !wants(*input) {
                    return;
                }
                let x = &nodes[input.0].value;
                let dx = acc(grads, *input, x.len());
                for ((d, &u), &v) in dx.iter_mut().zip(up).zip(x.data()) {
                    if v > 0.0 {
                        *d += u;
                    }
                }
            }
            Op::Concat { inputs } => {
                let n = node.value.shape()[0];
                let inner: usize = node.value.shape()[2..].iter().product();
                let total = node.value.shape()[1] * inner;
                let mut offset = 0;
                for id in inputs {
                    let block = nodes[id.0].value.shape()[1] * inner;
                    if wants(*id) {
                        let len = nodes[id.0].value.len();
                        let dx = acc(grads, *id, len);
                        for s in 0..n {
                            let src = &up[s * total + offset..s * total + offset + block];
                            dx[s * block..(s + 1) * block].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                        }
                    }
                    offset += block;
                }
            }
            Op::Add { a, b } => {
                for id in [a, b] {
                    if wants(*id) {
                        let dx = acc(grads, *id, up.len());
                        dx.iter_mut().zip(up).for_each(|(d, u)| *d += u);
                    }
                }
            }
            Op::Flatten { input } => {
                if wants(*input) {
                    let dx = acc(grads, *input, up.len());
                    dx.iter_mut().zip(up).for_each(|(d, u)| *d += u);
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                if !wants(*logits) {
                    return;
                }
                let n = labels.len();
                let k = probs.shape()[1];
                let scale = up[0] / n as f64;
                let dz = acc(grads, *logits, n * k);
                for (r, &label) in labels.iter().enumerate() {
                    for c in 0..k {
                        let onehot = if c == label { 1.0 } else { 0.0 };
                        dz[r * k + c] += scale * (probs.data()[r * k + c] - onehot);
                    }
                }
            }
            Op::WeightedSum { terms } => {
                for &(id, w) in terms {
                    if wants(id) {
                        acc(grads, id, 1)[0] += w * up[0];
                    }
                }
            }
        }
    }
}

/// Mutable adjoint buffer for `id`, created zeroed on first use.
fn acc(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut [f64] {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn out_extent(size: usize, kernel: usize, stride: usize, padding: usize, axis: &str) -> Result<usize> {
    let span = (size + 2 * padding)
        .checked_sub(kernel)
        .ok_or_else(|| Error::config(axis, format!("kernel {kernel} exceeds padded extent {}", size + 2 * padding)))?;
    if span % stride != 0 {
        return Err(Error::config(
            axis,
            format!("output extent ({size}+2*{padding}-{kernel})/{stride}+1 is not an integer"),
        ));
    }
    Ok(span / stride + 1)
}

/// Row-wise softmax with max subtraction. Returns probabilities and each row's log-normalizer.
pub fn softmax_rows(logits: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    let mut probs = vec![0.0; rows * cols];
    let mut log_norms = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &logits[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let out = &mut probs[r * cols..(r + 1) * cols];
        let mut sum = 0.0;
        for (p, &z) in out.iter_mut().zip(row) {
            *p = (z - max).exp();
            sum += *p;
        }
        out.iter_mut().for_each(|p| *p /= sum);
        log_norms.push(max + sum.ln());
    }
    (probs, log_norms)
}
