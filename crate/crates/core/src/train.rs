//! Stratified splitting, momentum-SGD training and accuracy evaluation.

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Mode, Model};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 32, learning_rate: 0.01, momentum: 0.9, seed: 0, shuffle: true }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        // zero is allowed so that a run can be checked to leave parameters untouched
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config("learning_rate", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epoch_loss: Vec<f64>,
    pub epoch_train_accuracy: Vec<f64>,
    pub test_accuracy: Option<f64>,
}

/// Stratified split. Each class contributes `round_half_up(fraction · size)` records to the
/// training side, clamped to `[1, size − 1]` so both sides see every class.
///
/// Both outputs keep the input's record order.
pub fn split_dataset(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if dataset.is_empty() {
        return Err(Error::Input("cannot split an empty dataset".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config("train_fraction", format!("{train_fraction} is outside (0, 1)")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes()];
    for (i, r) in dataset.records().iter().enumerate() {
        by_class[r.label].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; dataset.len()];
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::Input(format!(
                "class {} has {} sample(s); stratified splitting needs at least 2",
                dataset.class_names()[class],
                members.len()
            )));
        }
        let n = members.len();
        let take = ((train_fraction * n as f64 + 0.5).floor() as usize).clamp(1, n - 1);
        members.shuffle(&mut rng);
        for &i in &members[..take] {
            in_train[i] = true;
        }
    }
    let (train, test): (Vec<usize>, Vec<usize>) = (0..dataset.len()).partition(|&i| in_train[i]);
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

/// Trains with momentum SGD on mean cross-entropy (plus auxiliary losses for models that have them).
///
/// The model is left in eval mode. `test_accuracy` of the returned history is unset.
pub fn train_sgd(model: &mut Model, train: &Dataset, config: &TrainConfig) -> Result<TrainHistory> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let want = model.config().input_shape;
    if train.image_shape() != Some(want) {
        return Err(Error::Input(format!("dataset images {:?} do not match model input {want:?}", train.image_shape())));
    }
    if train.num_classes() != model.config().num_classes {
        return Err(Error::Input(format!(
            "dataset has {} classes, model has {}",
            train.num_classes(),
            model.config().num_classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut velocity: Vec<Vec<f64>> = model.parameters().iter().map(|p| vec![0.0; p.len()]).collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainHistory::default();
    model.set_mode(Mode::Train);
    let result = (|| {
        for epoch in 1..=config.epochs {
            if config.shuffle {
                order.shuffle(&mut rng);
            }
            let mut loss_sum = 0.0;
            let mut correct = 0usize;
            for chunk in order.chunks(config.batch_size) {
                let (batch, labels) = train.batch(chunk)?;
                let pass = model.record_forward(batch, Mode::Train, true, false)?;
                correct += count_correct(&pass, &labels);
                let (loss, grads) = model.loss_from_pass(pass, &labels)?;
                if !loss.is_finite() {
                    return Err(Error::Training { epoch, loss });
                }
                loss_sum += loss * chunk.len() as f64;
                for ((p, v), g) in model.parameters_mut().iter_mut().zip(&mut velocity).zip(&grads) {
                    for ((w, vi), gi) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                        *vi = config.momentum * *vi - config.learning_rate * gi;
                        *w += *vi;
                    }
                }
            }
            let mean_loss = loss_sum / train.len() as f64;
            let acc = correct as f64 / train.len() as f64;
            debug!("epoch {epoch}: loss {mean_loss:.5} train accuracy {acc:.4}");
            history.epoch_loss.push(mean_loss);
            history.epoch_train_accuracy.push(acc);
        }
        Ok(())
    })();
    model.set_mode(Mode::Eval);
    result.map(|()| history)
}

fn count_correct(pass: &crate::model::ForwardPass, labels: &[usize]) -> usize {
    let z = pass.graph.value(pass.logits);
    let k = z.shape()[1];
    z.data()
        .chunks_exact(k)
        .zip(labels)
        .filter(|(row, &y)| crate::model::argmax(row).0 == y)
        .count()
}

/// Fraction of records whose eval-mode prediction equals the label.
pub fn evaluate_accuracy(model: &Model, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Input("cannot evaluate accuracy on an empty dataset".into()));
    }
    let mut correct = 0;
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idx.chunks(64) {
        let (batch, labels) = dataset.batch(chunk)?;
        let preds = model.predict_batch(batch)?;
        correct += preds.iter().zip(&labels).filter(|(p, &y)| p.class == y).count();
    }
    Ok(correct as f64 / dataset.len() as f64)
}
