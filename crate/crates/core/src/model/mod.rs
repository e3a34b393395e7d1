//! Model families, parameter storage and inference.

mod config;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{ModelConfig, ModelFamily};

use crate::autodiff::{softmax_rows, Graph, NodeId, PoolMode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// One inference result.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub confidence: f64,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl Prediction {
    fn from_logits(logits: &[f64]) -> Self {
        let (probs, _) = softmax_rows(logits, 1, logits.len());
        let (class, confidence) = argmax(&probs);
        Self { class, confidence, logits: logits.to_vec(), probabilities: probs }
    }
}

/// Index and value of the maximum, lowest index on exact ties.
pub fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    (best, values[best])
}

/// A recorded forward pass with handles to the interesting nodes.
#[derive(Debug)]
pub struct ForwardPass {
    pub graph: Graph,
    pub input: NodeId,
    pub params: Vec<NodeId>,
    pub logits: NodeId,
    pub aux_logits: Vec<NodeId>,
    pub features: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    index: BTreeMap<String, usize>,
    mode: Mode,
}

impl Model {
    /// Builds a model with seeded Glorot-uniform weights and zero biases.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = parameter_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::with_capacity(layout.len());
        let mut params = Vec::with_capacity(layout.len());
        for (name, shape) in layout {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".W") {
                let (fan_in, fan_out) = fans(&shape);
                let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-s..s)).collect()
            } else {
                vec![0.0; n]
            };
            params.push(Tensor::new(shape, data)?);
            names.push(name);
        }
        Self::assemble(config, names, params)
    }

    /// Rebuilds a model from explicit parameters, checking names and shapes against the config.
    pub fn from_parameters(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let layout = parameter_layout(&config);
        if layout.len() != named.len() {
            return Err(Error::Input(format!("expected {} parameters, got {}", layout.len(), named.len())));
        }
        for ((want_name, want_shape), (name, t)) in layout.iter().zip(&named) {
            if want_name != name || want_shape[..] != *t.shape() {
                return Err(Error::Input(format!(
                    "parameter {name} {:?} does not match expected {want_name} {want_shape:?}",
                    t.shape()
                )));
            }
        }
        let (names, params) = named.into_iter().unzip();
        Self::assemble(config, names, params)
    }

    fn assemble(config: ModelConfig, names: Vec<String>, params: Vec<Tensor>) -> Result<Self> {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(Self { config, names, params, index, mode: Mode::Eval })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn parameter_names(&self) -> &[String] {
        &self.names
    }

    pub fn parameters(&self) -> &[Tensor] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// SHA-256 over the little-endian parameter bytes, hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            for v in p.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let [c, h, w] = self.config.input_shape;
        if batch.rank() != 4 || batch.shape()[1..] != [c, h, w] {
            return Err(Error::Input(format!(
                "image batch shape {:?} does not match model input [N, {c}, {h}, {w}]",
                batch.shape()
            )));
        }
        Ok(())
    }

    /// Accepts `[C,H,W]` or `[1,C,H,W]`.
    fn as_batch(&self, image: &Tensor) -> Result<Tensor> {
        let t = if image.rank() == 3 { image.clone().unsqueeze0() } else { image.clone() };
        self.check_batch(&t)?;
        if t.shape()[0] != 1 {
            return Err(Error::Input(format!("expected a single image, got batch of {}", t.shape()[0])));
        }
        Ok(t)
    }

    /// Records a forward pass over `batch` (`[N,C,H,W]`).
    ///
    /// Parameters enter the record as variables when `param_grads` is set, otherwise as
    /// constants; likewise the input for `input_grad`. Auxiliary heads run only in `Mode::Train`.
    pub fn record_forward(&self, batch: Tensor, mode: Mode, param_grads: bool, input_grad: bool) -> Result<ForwardPass> {
        self.check_batch(&batch)?;
        let mut g = Graph::new();
        let input = if input_grad { g.variable(batch) } else { g.constant(batch) };
        let params: Vec<NodeId> = self
            .params
            .iter()
            .map(|p| if param_grads { g.variable(p.clone()) } else { g.constant(p.clone()) })
            .collect();
        let p = |name: &str| params[self.index[name]];
        let mut aux_logits = Vec::new();
        let (features, logits) = match self.config.family {
            ModelFamily::Plain => {
                let mut x = input;
                for i in 1..=self.config.widths.len() {
                    x = g.conv2d(x, p(&format!("conv{i}.W")), p(&format!("conv{i}.b")), 1, 1)?;
                    x = g.relu(x)?;
                    x = g.pool2d(x, PoolMode::Max, 2, 2)?;
                }
                let f = g.flatten(x)?;
                let z = g.dense(f, p("fc.W"), p("fc.b"))?;
                (f, z)
            }
            ModelFamily::MiniInception => {
                let mut x = g.conv2d(input, p("stem.W"), p("stem.b"), 1, 1)?;
                x = g.relu(x)?;
                x = g.pool2d(x, PoolMode::Max, 2, 2)?;
                for m in 0..self.config.modules {
                    let pre = format!("inc{}", m + 1);
                    let b1 = g.conv2d(x, p(&format!("{pre}.b1.W")), p(&format!("{pre}.b1.b")), 1, 0)?;
                    let b1 = g.relu(b1)?;
                    let b3 = g.conv2d(x, p(&format!("{pre}.b3.W")), p(&format!("{pre}.b3.b")), 1, 1)?;
                    let b3 = g.relu(b3)?;
                    x = g.concat(&[b1, b3])?;
                    if mode == Mode::Train && self.config.aux_heads.contains(&m) {
                        let a = g.global_avg_pool(x)?;
                        let z = g.dense(a, p(&format!("aux{}.W", m + 1)), p(&format!("aux{}.b", m + 1)))?;
                        aux_logits.push(z);
                    }
                    if m + 1 < self.config.modules {
                        x = g.pool2d(x, PoolMode::Max, 2, 2)?;
                    }
                }
                let f = g.global_avg_pool(x)?;
                let z = g.dense(f, p("fc.W"), p("fc.b"))?;
                (f, z)
            }
            ModelFamily::MiniResnet => {
                let mut x = g.conv2d(input, p("stem.W"), p("stem.b"), 1, 1)?;
                x = g.relu(x)?;
                x = g.pool2d(x, PoolMode::Max, 2, 2)?;
                for r in 1..=self.config.modules {
                    x = residual_block(&mut g, x, &p, r)?;
                }
                let f = g.global_avg_pool(x)?;
                let z = g.dense(f, p("fc.W"), p("fc.b"))?;
                (f, z)
            }
        };
        Ok(ForwardPass { graph: g, input, params, logits, aux_logits, features })
    }

    /// Eval-mode prediction for one `[C,H,W]` image.
    pub fn forward_infer(&self, image: &Tensor) -> Result<Prediction> {
        let batch = self.as_batch(image)?;
        let pass = self.record_forward(batch, Mode::Eval, false, false)?;
        Ok(Prediction::from_logits(pass.graph.value(pass.logits).data()))
    }

    /// Eval-mode predictions for a `[N,C,H,W]` batch.
    pub fn predict_batch(&self, batch: Tensor) -> Result<Vec<Prediction>> {
        let pass = self.record_forward(batch, Mode::Eval, false, false)?;
        let z = pass.graph.value(pass.logits);
        let k = z.shape()[1];
        Ok(z.data().chunks_exact(k).map(Prediction::from_logits).collect())
    }

    /// Activation vector feeding the final dense layer.
    pub fn penultimate_features(&self, image: &Tensor) -> Result<Vec<f64>> {
        let batch = self.as_batch(image)?;
        let pass = self.record_forward(batch, Mode::Eval, false, false)?;
        Ok(pass.graph.value(pass.features).data().to_vec())
    }

    /// Penultimate features for every image of a batch, one row each.
    pub fn penultimate_features_batch(&self, batch: Tensor) -> Result<Vec<Vec<f64>>> {
        let pass = self.record_forward(batch, Mode::Eval, false, false)?;
        let f = pass.graph.value(pass.features);
        Ok(f.data().chunks_exact(f.shape()[1]).map(<[f64]>::to_vec).collect())
    }

    /// `∂J(θ,x,y)/∂x` of the eval-mode cross-entropy, parameters held fixed.
    ///
    /// Also returns the prediction at `x`, which callers get for free from the same pass.
    pub fn grad_wrt_input(&self, image: &Tensor, label: usize) -> Result<(Tensor, Prediction)> {
        let batch = self.as_batch(image)?;
        let shape = image.shape().to_vec();
        let pass = self.record_forward(batch, Mode::Eval, false, true)?;
        let ForwardPass { mut graph, input, logits, .. } = pass;
        let prediction = Prediction::from_logits(graph.value(logits).data());
        let loss = graph.softmax_cross_entropy(logits, &[label])?;
        let mut grads = graph.backward(loss)?;
        let g = grads.take(input).unwrap_or_else(|| vec![0.0; shape.iter().product()]);
        Ok((Tensor::new(shape, g)?, prediction))
    }

    /// Training objective on a batch: mean cross-entropy of the main head plus
    /// `aux_weight` times each auxiliary head's loss when in train mode.
    ///
    /// Returns the loss value and one gradient vector per parameter, in parameter order.
    pub fn loss_and_gradients(&self, batch: Tensor, labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
        let pass = self.record_forward(batch, self.mode, true, false)?;
        self.loss_from_pass(pass, labels)
    }

    /// Completes a pass recorded with parameter gradients into `(loss, per-parameter gradients)`.
    pub fn loss_from_pass(&self, pass: ForwardPass, labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
        let ForwardPass { mut graph, params, logits, aux_logits, .. } = pass;
        let main = graph.softmax_cross_entropy(logits, labels)?;
        let mut terms = vec![(main, 1.0)];
        for z in aux_logits {
            let aux = graph.softmax_cross_entropy(z, labels)?;
            terms.push((aux, self.config.aux_weight));
        }
        let loss = graph.weighted_sum(&terms)?;
        let value = graph.value(loss).data()[0];
        let mut grads = graph.backward(loss)?;
        let per_param = params
            .iter()
            .zip(&self.params)
            .map(|(&id, t)| grads.take(id).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect();
        Ok((value, per_param))
    }

    /// Fills every parameter's gradient buffer with `∂loss/∂θ` for the batch and returns the loss.
    pub fn backward_into_parameters(&mut self, batch: Tensor, labels: &[usize]) -> Result<f64> {
        let (loss, grads) = self.loss_and_gradients(batch, labels)?;
        for (p, g) in self.params.iter_mut().zip(grads) {
            p.set_grad(g)?;
        }
        Ok(loss)
    }
}

fn residual_block(g: &mut Graph, x: NodeId, p: &impl Fn(&str) -> NodeId, r: usize) -> Result<NodeId> {
    let h = g.conv2d(x, p(&format!("res{r}.conv1.W")), p(&format!("res{r}.conv1.b")), 1, 1)?;
    let h = g.relu(h)?;
    let h = g.conv2d(h, p(&format!("res{r}.conv2.W")), p(&format!("res{r}.conv2.b")), 1, 1)?;
    let y = g.add(x, h)?;
    g.relu(y)
}

fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [k, c, kh, kw] => (c * kh * kw, k * kh * kw),
        [d, m] => (*d, *m),
        _ => (1, 1),
    }
}

/// Ordered `(name, shape)` list for a config.
pub fn parameter_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let [c, _, _] = config.input_shape;
    let k = config.num_classes;
    let mut out = Vec::new();
    let conv = |out: &mut Vec<(String, Vec<usize>)>, name: String, cout: usize, cin: usize, size: usize| {
        out.push((format!("{name}.W"), vec![cout, cin, size, size]));
        out.push((format!("{name}.b"), vec![cout]));
    };
    match config.family {
        ModelFamily::Plain => {
            let mut cin = c;
            for (i, &w) in config.widths.iter().enumerate() {
                conv(&mut out, format!("conv{}", i + 1), w, cin, 3);
                cin = w;
            }
        }
        ModelFamily::MiniInception => {
            conv(&mut out, "stem".into(), config.widths[0], c, 3);
            let mut cin = config.widths[0];
            for m in 0..config.modules {
                let b = config.widths[m + 1];
                conv(&mut out, format!("inc{}.b1", m + 1), b, cin, 1);
                conv(&mut out, format!("inc{}.b3", m + 1), b, cin, 3);
                cin = 2 * b;
                if config.aux_heads.contains(&m) {
                    out.push((format!("aux{}.W", m + 1), vec![cin, k]));
                    out.push((format!("aux{}.b", m + 1), vec![k]));
                }
            }
        }
        ModelFamily::MiniResnet => {
            let w = config.widths[0];
            conv(&mut out, "stem".into(), w, c, 3);
            for r in 1..=config.modules {
                conv(&mut out, format!("res{r}.conv1"), w, w, 3);
                conv(&mut out, format!("res{r}.conv2"), w, w, 3);
            }
        }
    }
    out.push(("fc.W".into(), vec![config.feature_width(), k]));
    out.push(("fc.b".into(), vec![k]));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(shape: [usize; 3], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn plain_parameter_names() {
        let m = Model::build(ModelConfig::plain([3, 16, 16], 4), 1).unwrap();
        assert_eq!(m.parameter_names(), ["conv1.W", "conv1.b", "conv2.W", "conv2.b", "fc.W", "fc.b"]);
        assert_eq!(m.parameter("fc.W").unwrap().shape(), &[16 * 4 * 4, 4]);
    }

    #[test]
    fn rebuild_is_bitwise_identical() {
        for cfg in [
            ModelConfig::plain([3, 16, 16], 3),
            ModelConfig::mini_inception([3, 16, 16], 3),
            ModelConfig::mini_resnet([3, 16, 16], 3),
        ] {
            let a = Model::build(cfg.clone(), 42).unwrap();
            let b = Model::build(cfg.clone(), 42).unwrap();
            let c = Model::build(cfg, 43).unwrap();
            assert_eq!(a.checksum(), b.checksum());
            assert_ne!(a.checksum(), c.checksum());
        }
    }

    #[test]
    fn inception_module_width_is_branch_sum() {
        // stem 8 channels feeding a module with 1x1 and 3x3 branches of width 4 each
        let cfg = ModelConfig {
            family: ModelFamily::MiniInception,
            input_shape: [3, 8, 8],
            num_classes: 2,
            widths: vec![8, 4],
            modules: 1,
            aux_heads: vec![],
            aux_weight: 0.3,
        };
        let m = Model::build(cfg, 0).unwrap();
        assert_eq!(m.parameter("inc1.b1.W").unwrap().shape(), &[4, 8, 1, 1]);
        assert_eq!(m.parameter("inc1.b3.W").unwrap().shape(), &[4, 8, 3, 3]);
        assert_eq!(m.parameter("fc.W").unwrap().shape()[0], 8);
        let f = m.penultimate_features(&image([3, 8, 8], 1)).unwrap();
        assert_eq!(f.len(), 8);
    }

    #[test]
    fn zeroed_residual_branch_is_identity_on_nonnegative_input() {
        let cfg = ModelConfig::mini_resnet([3, 8, 8], 2);
        let mut m = Model::build(cfg, 5).unwrap();
        for name in ["res1.conv1.W", "res1.conv1.b", "res1.conv2.W", "res1.conv2.b"] {
            m.parameter_mut(name).unwrap().data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let x = g.constant(image([8, 4, 4], 9).unsqueeze0());
        let ids: Vec<NodeId> = m.parameters().iter().map(|t| g.constant(t.clone())).collect();
        let p = |name: &str| ids[m.index[name]];
        let y = residual_block(&mut g, x, &p, 1).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn tie_goes_to_lowest_class() {
        let cfg = ModelConfig::plain([1, 4, 4], 2);
        let mut m = Model::build(cfg, 0).unwrap();
        m.parameter_mut("fc.W").unwrap().data_mut().fill(0.0);
        let p = m.forward_infer(&image([1, 4, 4], 3)).unwrap();
        assert_eq!(p.class, 0);
        assert_eq!(p.confidence, 0.5);
    }

    #[test]
    fn confidence_bounds_and_shape_errors() {
        let m = Model::build(ModelConfig::mini_inception([3, 16, 16], 5), 7).unwrap();
        for s in 0..5 {
            let p = m.forward_infer(&image([3, 16, 16], s)).unwrap();
            assert!(p.confidence >= 0.2 - 1e-12 && p.confidence <= 1.0);
            let max = p.probabilities.iter().copied().fold(0.0, f64::max);
            assert!((p.confidence - max).abs() < 1e-9);
        }
        assert_eq!(m.forward_infer(&image([3, 8, 8], 0)).unwrap_err().code(), "input");
    }

    #[test]
    fn train_and_eval_main_logits_coincide() {
        let m = Model::build(ModelConfig::mini_inception([3, 16, 16], 4), 3).unwrap();
        let x = image([3, 16, 16], 11).unsqueeze0();
        let train = m.record_forward(x.clone(), Mode::Train, false, false).unwrap();
        let eval = m.record_forward(x, Mode::Eval, false, false).unwrap();
        assert_eq!(train.aux_logits.len(), 1);
        assert!(eval.aux_logits.is_empty());
        assert_eq!(train.graph.value(train.logits), eval.graph.value(eval.logits));
    }

    #[test]
    fn forward_is_pure() {
        let m = Model::build(ModelConfig::mini_resnet([3, 16, 16], 4), 3).unwrap();
        let x = image([3, 16, 16], 2);
        assert_eq!(m.forward_infer(&x).unwrap(), m.forward_infer(&x).unwrap());
        assert_eq!(m.penultimate_features(&x).unwrap(), m.penultimate_features(&x).unwrap());
    }

    #[test]
    fn zero_final_weights_give_zero_input_gradient() {
        let mut m = Model::build(ModelConfig::plain([3, 8, 8], 3), 1).unwrap();
        m.parameter_mut("fc.W").unwrap().data_mut().fill(0.0);
        let (g, pred) = m.grad_wrt_input(&image([3, 8, 8], 4), 1).unwrap();
        assert!((pred.confidence - 1.0 / 3.0).abs() < 1e-12);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_fills_parameter_grads() {
        let mut m = Model::build(ModelConfig::plain([3, 8, 8], 3), 1).unwrap();
        let batch = Tensor::stack(&[&image([3, 8, 8], 1), &image([3, 8, 8], 2)]).unwrap();
        let loss = m.backward_into_parameters(batch, &[0, 2]).unwrap();
        assert!(loss > 0.0);
        assert!(m.parameters().iter().all(|p| p.grad().is_some()));
    }
}
