//! Trainable parameters and the Adam update.

use serde::{Deserialize, Serialize};

use super::{DenseMatrix, Rng};
use crate::error::{Error, Result};

/// Adam hyperparameters with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// A parameter matrix together with its gradient accumulator and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    name: String,
    pub value: DenseMatrix,
    pub grad: DenseMatrix,
    adam_m: DenseMatrix,
    adam_v: DenseMatrix,
    step_count: u64,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: DenseMatrix) -> Self {
        let (r, c) = value.shape();
        Self {
            name: name.into(),
            value,
            grad: DenseMatrix::zeros(r, c),
            adam_m: DenseMatrix::zeros(r, c),
            adam_v: DenseMatrix::zeros(r, c),
            step_count: 0,
        }
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self::new(name, DenseMatrix::zeros(rows, cols))
    }

    pub fn glorot(name: impl Into<String>, rng: &mut Rng, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Self::new(name, glorot_init(rng, fan_in, fan_out)?))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// One Adam step followed by decoupled decay `value -= lr * weight_decay * value`
    /// (decay uses the pre-step value). Clears the gradient afterwards.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if !self.grad.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient in parameter `{}`",
                self.name
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - cfg.beta1.powi(t);
        let bias2 = 1.0 - cfg.beta2.powi(t);
        let decay = cfg.lr * cfg.weight_decay;

        let value = self.value.as_mut_slice();
        let m = self.adam_m.as_mut_slice();
        let v = self.adam_v.as_mut_slice();
        for (((w, &g), m), v) in value.iter_mut().zip(self.grad.as_slice()).zip(m).zip(v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            let decayed = *w * decay;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            *w -= decayed;
        }
        self.grad.fill(0.0);
        Ok(())
    }
}

/// Glorot/Xavier uniform initialisation of a `fan_in x fan_out` matrix.
pub fn glorot_init(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Result<DenseMatrix> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::invalid(format!(
            "glorot_init requires positive fans, got {fan_in}x{fan_out}"
        )));
    }
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.uniform(-limit, limit)).collect();
    DenseMatrix::from_vec(fan_in, fan_out, data)
}

/// Something that owns trainable parameters in a fixed order.
pub trait Parameters {
    fn params(&self) -> Vec<&ParamTensor>;
    fn params_mut(&mut self) -> Vec<&mut ParamTensor>;

    fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(ParamTensor::zero_grad);
    }

    fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        self.params_mut().into_iter().try_for_each(|p| p.adam_step(cfg))
    }

    fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}
