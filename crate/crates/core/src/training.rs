//! Training hyperparameters and the mini-batch loop shared by every stage
//! that fits a classifier on labelled matrices.

use serde::{Deserialize, Serialize};

use crate::classifier::ConvClassifierParams;
use crate::dfc::Label;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, DenseMatrix, Parameters, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate of the convolutional classifier.
    pub classifier_lr: f64,
    /// Learning rate of the representation generator (autoencoder).
    pub generator_lr: f64,
    pub weight_decay: f64,
    /// Weight of the cosine embedding term in joint training.
    pub lambda_cos: f64,
    /// Weight of the decoder reconstruction term in joint training.
    pub lambda_rec: f64,
    /// Stop source training when validation accuracy has not improved for
    /// this many epochs.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            classifier_lr: 0.00004,
            generator_lr: 0.00008,
            weight_decay: 0.0005,
            lambda_cos: 1.0,
            lambda_rec: 0.1,
            patience: Some(25),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.classifier_lr > 0.0 && self.generator_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.weight_decay < 0.0 || self.lambda_cos < 0.0 || self.lambda_rec < 0.0 {
            return Err(Error::Config(
                "weight decay and loss weights must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn classifier_adam(&self) -> AdamConfig {
        AdamConfig::new(self.classifier_lr, self.weight_decay)
    }

    pub fn generator_adam(&self) -> AdamConfig {
        AdamConfig::new(self.generator_lr, self.weight_decay)
    }
}

/// A shuffled visiting order split into mini-batches.
pub fn batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// One epoch of mini-batch Adam on cross-entropy. Gradients are summed in
/// batch-index order, so the result is bitwise reproducible. Returns the mean
/// training loss.
pub fn train_classifier_epoch(
    params: &mut ConvClassifierParams,
    samples: &[(&DenseMatrix, Label)],
    batch_size: usize,
    adam: &AdamConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let mut total = 0.0;
    for batch in batches(samples.len(), batch_size, rng) {
        params.zero_grad();
        let scale = 1.0 / batch.len() as f64;
        for &i in &batch {
            let (x, y) = samples[i];
            let (loss, _) = params.accumulate_loss_grad(x, y, scale)?;
            total += loss;
        }
        params.adam_step(adam)?;
    }
    let mean = total / samples.len() as f64;
    if !mean.is_finite() {
        return Err(Error::Numeric("training loss diverged".into()));
    }
    Ok(mean)
}

/// Fraction of samples whose argmax prediction matches the label.
pub fn accuracy(params: &ConvClassifierParams, samples: &[(&DenseMatrix, Label)]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for &(x, y) in samples {
        if params.forward(x)?.predicted() == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}
