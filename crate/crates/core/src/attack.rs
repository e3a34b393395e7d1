//! White-box FGSM and BIM attacks, the confidence-gated success rule and fooling rates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Model, Prediction};
use crate::tensor::Tensor;

/// Anything that can classify an image and differentiate its loss w.r.t. the image.
pub trait Classifier {
    fn num_classes(&self) -> usize;

    fn predict(&self, image: &Tensor) -> Result<Prediction>;

    /// `∂J(θ, x, y)/∂x` together with the prediction at `x`.
    fn input_gradient(&self, image: &Tensor, label: usize) -> Result<(Tensor, Prediction)>;
}

impl Classifier for Model {
    fn num_classes(&self) -> usize {
        self.config().num_classes
    }

    fn predict(&self, image: &Tensor) -> Result<Prediction> {
        self.forward_infer(image)
    }

    fn input_gradient(&self, image: &Tensor, label: usize) -> Result<(Tensor, Prediction)> {
        self.grad_wrt_input(image, label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Algorithm {
    Fgsm,
    Bim,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Fgsm => "FGSM",
            Algorithm::Bim => "BIM",
        })
    }
}

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub algorithm: Algorithm,
    /// L∞ budget in normalized pixel units.
    pub epsilon: f64,
    /// Per-iteration step (BIM only).
    #[serde(default)]
    pub step_size: f64,
    /// Iteration count (BIM only).
    #[serde(default = "one")]
    pub iterations: usize,
    #[serde(default = "default_threshold")]
    pub confidence_threshold: f64,
}

fn one() -> usize {
    1
}

fn default_threshold() -> f64 {
    DEFAULT_CONFIDENCE_THRESHOLD
}

impl AttackConfig {
    pub fn fgsm(epsilon: f64) -> Self {
        Self {
            algorithm: Algorithm::Fgsm,
            epsilon,
            step_size: epsilon,
            iterations: 1,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
        }
    }

    pub fn bim(epsilon: f64, step_size: f64, iterations: usize) -> Self {
        Self { algorithm: Algorithm::Bim, epsilon, step_size, iterations, confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD }
    }

    /// FGSM and BIM (`α = ε/4`, 10 iterations) at ε ∈ {2, 4, 8}/255.
    pub fn default_sweep() -> Vec<Self> {
        let mut out = Vec::new();
        for eps in [2.0 / 255.0, 4.0 / 255.0, 8.0 / 255.0] {
            out.push(Self::fgsm(eps));
            out.push(Self::bim(eps, eps / 4.0, 10));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config("epsilon", format!("{} is outside [0, 1]", self.epsilon)));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::config("confidence_threshold", "must lie in [0, 1]"));
        }
        if self.algorithm == Algorithm::Bim {
            if !(self.step_size > 0.0 && self.step_size <= self.epsilon) {
                return Err(Error::config(
                    "step_size",
                    format!("BIM needs 0 < step_size <= epsilon, got {} with epsilon {}", self.step_size, self.epsilon),
                ));
            }
            if self.iterations == 0 {
                return Err(Error::config("iterations", "must be at least 1"));
            }
        }
        Ok(())
    }

    /// Short stable label such as `BIM-eps0.031373`, used for file names.
    pub fn label(&self) -> String {
        format!("{}-eps{:.6}", self.algorithm, self.epsilon)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_label(model: &impl Classifier, label: usize) -> Result<()> {
    if label >= model.num_classes() {
        return Err(Error::Input(format!("label {label} outside [0, {})", model.num_classes())));
    }
    Ok(())
}

/// Single signed-gradient ascent step: `clamp₀₁(x + ε·sign(∇ₓJ))`.
pub fn fgsm(model: &impl Classifier, image: &Tensor, label: usize, epsilon: f64) -> Result<Tensor> {
    check_label(model, label)?;
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::config("epsilon", format!("{epsilon} is outside [0, 1]")));
    }
    let (grad, _) = model.input_gradient(image, label)?;
    let data = image
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&x, &g)| (x + epsilon * sign(g)).clamp(0.0, 1.0))
        .collect();
    Tensor::new(image.shape().to_vec(), data)
}

/// Iterated FGSM. Each step moves by `step_size·sign(∇J)` evaluated at the current iterate,
/// then clips into `[x − ε, x + ε] ∩ [0, 1]`.
pub fn bim(
    model: &impl Classifier,
    image: &Tensor,
    label: usize,
    epsilon: f64,
    step_size: f64,
    iterations: usize,
) -> Result<Tensor> {
    check_label(model, label)?;
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::config("epsilon", format!("{epsilon} is outside [0, 1]")));
    }
    if !(step_size > 0.0 && step_size.is_finite()) {
        return Err(Error::config("step_size", "must be positive"));
    }
    if iterations == 0 {
        return Err(Error::config("iterations", "must be at least 1"));
    }
    let lower: Vec<f64> = image.data().iter().map(|&x| (x - epsilon).max(0.0)).collect();
    let upper: Vec<f64> = image.data().iter().map(|&x| (x + epsilon).min(1.0)).collect();
    let mut current = image.clone();
    for _ in 0..iterations {
        let (grad, _) = model.input_gradient(&current, label)?;
        for (i, (v, &g)) in current.data_mut().iter_mut().zip(grad.data()).enumerate() {
            *v = (*v + step_size * sign(g)).clamp(lower[i], upper[i]);
        }
    }
    Ok(current)
}

/// The success gate: the original must be correct with confidence above `threshold`, and the
/// adversarial prediction must be wrong with confidence above `threshold`.
pub fn attack_success(original: (usize, f64), adversarial: (usize, f64), label: usize, threshold: f64) -> bool {
    original.0 == label && original.1 > threshold && adversarial.0 != label && adversarial.1 > threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoolingRate {
    pub value: f64,
    /// Set when nothing was attacked; `value` is then reported as 0.
    pub degenerate: bool,
}

/// `misclassified / attacked`.
pub fn fooling_rate(misclassified: usize, attacked: usize) -> Result<FoolingRate> {
    if misclassified > attacked {
        return Err(Error::Input(format!("{misclassified} misclassified exceeds {attacked} attacked")));
    }
    if attacked == 0 {
        return Ok(FoolingRate { value: 0.0, degenerate: true });
    }
    Ok(FoolingRate { value: misclassified as f64 / attacked as f64, degenerate: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    /// Index into the attacked dataset.
    pub index: usize,
    pub source: String,
    pub true_class: usize,
    pub original_class: usize,
    pub original_confidence: f64,
    pub adversarial_class: Option<usize>,
    pub adversarial_confidence: Option<f64>,
    pub linf: f64,
    pub l2: f64,
    pub success: bool,
    /// The original was misclassified or not confident enough, so it was not attacked.
    pub skipped: bool,
    #[serde(skip)]
    pub perturbation: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCount {
    pub source: usize,
    pub target: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub config: AttackConfig,
    pub num_classes: usize,
    pub attacked: usize,
    pub misclassified: usize,
    pub fooling_rate: FoolingRate,
    /// Successful attacks per (source class → adversarial class), sorted by source then target.
    pub pair_counts: Vec<PairCount>,
    pub records: Vec<AttackRecord>,
}

impl CampaignResult {
    /// `histogram[target]` of successful adversarial classes for one source class.
    pub fn target_histogram(&self, source: usize) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for p in self.pair_counts.iter().filter(|p| p.source == source) {
            h[p.target] += p.count;
        }
        h
    }

    /// Successful adversarial examples per adversarial class, over all sources.
    pub fn target_totals(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for p in &self.pair_counts {
            h[p.target] += p.count;
        }
        h
    }

    /// Checks the count invariants against the records.
    pub fn check_consistency(&self) -> Result<()> {
        let attacked = self.records.iter().filter(|r| !r.skipped).count();
        let successes = self.records.iter().filter(|r| r.success).count();
        let pair_total: usize = self.pair_counts.iter().map(|p| p.count).sum();
        let rate = fooling_rate(self.misclassified, self.attacked)?;
        if attacked != self.attacked || successes != self.misclassified || pair_total != self.misclassified || rate != self.fooling_rate
        {
            return Err(Error::Corruption(format!(
                "campaign {} counts disagree: attacked {attacked}/{}, successes {successes}/{}, pairs {pair_total}",
                self.config.label(),
                self.attacked,
                self.misclassified
            )));
        }
        Ok(())
    }
}

/// Attacks every record of `dataset` that the model classifies correctly with confidence above
/// the threshold. Records come back in dataset order.
pub fn run_campaign(model: &impl Classifier, dataset: &Dataset, config: &AttackConfig) -> Result<CampaignResult> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Input("cannot run a campaign on an empty dataset".into()));
    }
    if dataset.num_classes() != model.num_classes() {
        return Err(Error::Input(format!(
            "dataset has {} classes, model has {}",
            dataset.num_classes(),
            model.num_classes()
        )));
    }
    let tau = config.confidence_threshold;
    let mut records = Vec::with_capacity(dataset.len());
    let mut pairs: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (index, rec) in dataset.records().iter().enumerate() {
        let original = model.predict(&rec.image)?;
        let mut out = AttackRecord {
            index,
            source: rec.source.clone(),
            true_class: rec.label,
            original_class: original.class,
            original_confidence: original.confidence,
            adversarial_class: None,
            adversarial_confidence: None,
            linf: 0.0,
            l2: 0.0,
            success: false,
            skipped: true,
            perturbation: None,
        };
        if original.class == rec.label && original.confidence > tau {
            let adv = match config.algorithm {
                Algorithm::Fgsm => fgsm(model, &rec.image, rec.label, config.epsilon)?,
                Algorithm::Bim => bim(model, &rec.image, rec.label, config.epsilon, config.step_size, config.iterations)?,
            };
            let after = model.predict(&adv)?;
            let rho: Vec<f64> = adv.data().iter().zip(rec.image.data()).map(|(a, x)| a - x).collect();
            let rho = Tensor::new(adv.shape().to_vec(), rho)?;
            out.skipped = false;
            out.adversarial_class = Some(after.class);
            out.adversarial_confidence = Some(after.confidence);
            out.linf = rho.max_abs();
            out.l2 = rho.l2_norm();
            out.success = attack_success((original.class, original.confidence), (after.class, after.confidence), rec.label, tau);
            out.perturbation = Some(rho);
            if out.success {
                *pairs.entry((rec.label, after.class)).or_default() += 1;
            }
        }
        records.push(out);
    }
    let attacked = records.iter().filter(|r| !r.skipped).count();
    let misclassified = records.iter().filter(|r| r.success).count();
    Ok(CampaignResult {
        config: config.clone(),
        num_classes: dataset.num_classes(),
        attacked,
        misclassified,
        fooling_rate: fooling_rate(misclassified, attacked)?,
        pair_counts: pairs.into_iter().map(|((source, target), count)| PairCount { source, target, count }).collect(),
        records,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::autodiff::softmax_rows;
    use crate::data::Record;

    /// `z = W x + b` with a softmax head; gradients in closed form.
    pub(crate) struct Linear {
        pub weights: Vec<Vec<f64>>,
        pub bias: Vec<f64>,
    }

    impl Linear {
        fn logits(&self, x: &Tensor) -> Vec<f64> {
            self.weights
                .iter()
                .zip(&self.bias)
                .map(|(w, b)| w.iter().zip(x.data()).map(|(a, v)| a * v).sum::<f64>() + b)
                .collect()
        }
        fn pred(z: &[f64]) -> Prediction {
            let (p, _) = softmax_rows(z, 1, z.len());
            let (class, confidence) = crate::model::argmax(&p);
            Prediction { class, confidence, logits: z.to_vec(), probabilities: p }
        }
    }

    impl Classifier for Linear {
        fn num_classes(&self) -> usize {
            self.weights.len()
        }
        fn predict(&self, image: &Tensor) -> Result<Prediction> {
            Ok(Self::pred(&self.logits(image)))
        }
        fn input_gradient(&self, image: &Tensor, label: usize) -> Result<(Tensor, Prediction)> {
            let p = Self::pred(&self.logits(image));
            let mut g = vec![0.0; image.len()];
            for (c, w) in self.weights.iter().enumerate() {
                let coef = p.probabilities[c] - if c == label { 1.0 } else { 0.0 };
                g.iter_mut().zip(w).for_each(|(gi, wi)| *gi += coef * wi);
            }
            Ok((Tensor::new(image.shape().to_vec(), g)?, p))
        }
    }

    /// Two classes over a 4-pixel image; `w0 − w1 = [0.25, −0.25, 0.25, −0.25]` has unit L1 norm,
    /// so the logit margin drops by exactly `step` per signed step.
    fn two_class(margin_bias: f64) -> Linear {
        Linear { weights: vec![vec![0.25, -0.25, 0.25, -0.25], vec![0.0; 4]], bias: vec![margin_bias, 0.0] }
    }

    fn x_mid() -> Tensor {
        Tensor::full(vec![1, 2, 2], 0.5)
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let m = two_class(0.1);
        let x = Tensor::new(vec![1, 2, 2], vec![0.1, 0.9, 0.0, 1.0]).unwrap();
        assert_eq!(fgsm(&m, &x, 0, 0.0).unwrap(), x);
        assert_eq!(bim(&m, &x, 0, 0.0, 0.01, 5).unwrap(), x);
    }

    #[test]
    fn positive_gradient_raises_every_pixel_by_epsilon() {
        // With label 1 and w0 = 0, the loss gradient is p0·(w0 − w1) = −p0·w1; choose w1 negative.
        let m = Linear { weights: vec![vec![0.0; 4], vec![-1.0; 4]], bias: vec![0.0, 0.0] };
        let x = Tensor::new(vec![1, 2, 2], vec![0.2, 0.3, 0.4, 0.5]).unwrap();
        let adv = fgsm(&m, &x, 1, 0.05).unwrap();
        for (a, b) in adv.data().iter().zip(x.data()) {
            assert_eq!(*a, b + 0.05);
        }
    }

    #[test]
    fn fgsm_flips_exactly_past_the_margin_threshold() {
        // margin m = (w0 − w1)·x + (b0 − b1) = 0 + b; threshold ε* = m / ‖w0 − w1‖₁ = b.
        let b = 0.1375;
        let m = two_class(b);
        let x = x_mid();
        assert_eq!(m.predict(&x).unwrap().class, 0);
        let threshold = b / 1.0;
        assert_eq!(m.predict(&fgsm(&m, &x, 0, threshold - 1e-6).unwrap()).unwrap().class, 0);
        assert_eq!(m.predict(&fgsm(&m, &x, 0, threshold + 1e-6).unwrap()).unwrap().class, 1);
        // cross-check with a sweep
        let first_flip = (1..=400)
            .map(|i| i as f64 * 0.001)
            .find(|&eps| m.predict(&fgsm(&m, &x, 0, eps).unwrap()).unwrap().class == 1)
            .unwrap();
        assert!((first_flip - 0.138).abs() < 1e-9);
    }

    #[test]
    fn bim_reaches_linear_margin_within_ceiling_steps() {
        let b = 0.1;
        let step = 0.03;
        let m = two_class(b);
        let x = x_mid();
        let needed = (b / step).ceil() as usize; // 4
        let adv = bim(&m, &x, 0, 0.5, step, needed).unwrap();
        assert_eq!(m.predict(&adv).unwrap().class, 1);
        let short = bim(&m, &x, 0, 0.5, step, needed - 1).unwrap();
        assert_eq!(m.predict(&short).unwrap().class, 0);
    }

    #[test]
    fn single_step_bim_equals_fgsm() {
        let m = two_class(0.3);
        let x = Tensor::new(vec![1, 2, 2], vec![0.0, 0.99, 0.5, 0.02]).unwrap();
        let a = fgsm(&m, &x, 0, 0.04).unwrap();
        let b = bim(&m, &x, 0, 0.04, 0.04, 1).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn bim_stays_in_the_epsilon_ball() {
        let m = two_class(5.0);
        let x = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 0.5, 0.51]).unwrap();
        let adv = bim(&m, &x, 0, 0.02, 0.015, 20).unwrap();
        for (a, v) in adv.data().iter().zip(x.data()) {
            assert!((a - v).abs() <= 0.02 + 1e-12);
            assert!((0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn success_gate() {
        // airplane (0) at 99.81% turned into beach (3) at 99.87%
        assert!(attack_success((0, 0.9981), (3, 0.9987), 0, 0.7));
        assert!(!attack_success((0, 0.9981), (0, 0.99), 0, 0.7));
        assert!(!attack_success((0, 0.9981), (2, 0.65), 0, 0.7));
        assert!(!attack_success((0, 0.9981), (2, 0.69), 0, 0.7));
        assert!(attack_success((0, 0.9981), (2, 0.71), 0, 0.7));
        assert!(!attack_success((1, 0.9981), (2, 0.9), 0, 0.7));
        assert!(!attack_success((0, 0.7), (2, 0.9), 0, 0.7));
    }

    #[test]
    fn fooling_rate_arithmetic() {
        assert_eq!(fooling_rate(0, 100).unwrap(), FoolingRate { value: 0.0, degenerate: false });
        assert_eq!(fooling_rate(5, 8).unwrap().value, 0.625);
        assert!((fooling_rate(1449, 1679).unwrap().value * 100.0 - 86.30).abs() < 0.01);
        assert_eq!(fooling_rate(0, 0).unwrap(), FoolingRate { value: 0.0, degenerate: true });
        assert_eq!(fooling_rate(3, 2).unwrap_err().code(), "input");
    }

    fn points(images: &[(f64, usize)]) -> Dataset {
        let records = images
            .iter()
            .enumerate()
            .map(|(i, &(v, label))| Record { image: Tensor::full(vec![1, 2, 2], v), label, source: format!("p{i}") })
            .collect();
        Dataset::new(records, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn campaign_counts() {
        // Pixel value v gives margin b + 0·v, so use the bias to make class 0 confident.
        let m = Linear { weights: vec![vec![2.0, -2.0, 2.0, -2.0], vec![0.0; 4]], bias: vec![2.0, 0.0] };
        let ds = points(&[(0.5, 0), (0.5, 0), (0.5, 1)]);
        let none = run_campaign(&m, &ds, &AttackConfig::fgsm(0.0)).unwrap();
        assert_eq!(none.attacked, 2);
        assert_eq!(none.misclassified, 0);
        assert_eq!(none.fooling_rate.value, 0.0);
        assert!(none.records[2].skipped);
        none.check_consistency().unwrap();

        let strong = run_campaign(&m, &ds, &AttackConfig::fgsm(0.5)).unwrap();
        assert_eq!(strong.misclassified, 2);
        assert_eq!(strong.pair_counts, vec![PairCount { source: 0, target: 1, count: 2 }]);
        assert_eq!(strong.fooling_rate.value, 1.0);
        assert_eq!(strong.target_totals(), vec![0, 2]);
        for r in strong.records.iter().filter(|r| !r.skipped) {
            assert!(r.linf <= 0.5 + 1e-12);
        }
        strong.check_consistency().unwrap();
    }

    #[test]
    fn all_misclassified_is_degenerate() {
        let m = Linear { weights: vec![vec![0.0; 4], vec![0.0; 4]], bias: vec![0.0, 3.0] };
        let ds = points(&[(0.5, 0), (0.2, 0)]);
        let r = run_campaign(&m, &ds, &AttackConfig::bim(0.1, 0.01, 3)).unwrap();
        assert_eq!(r.attacked, 0);
        assert!(r.fooling_rate.degenerate);
        assert_eq!(r.fooling_rate.value, 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(AttackConfig::bim(0.01, 0.02, 3).validate().is_err());
        assert!(AttackConfig::bim(0.01, 0.0, 3).validate().is_err());
        assert!(AttackConfig::fgsm(1.5).validate().is_err());
        for c in AttackConfig::default_sweep() {
            c.validate().unwrap();
        }
        let empty = Dataset::new(vec![], vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(run_campaign(&two_class(0.0), &empty, &AttackConfig::fgsm(0.1)).unwrap_err().code(), "input");
    }
}
