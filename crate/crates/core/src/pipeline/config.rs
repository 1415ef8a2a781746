use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierShape;
use crate::dfc::WindowConfig;
use crate::error::{Error, Result};
use crate::training::TrainConfig;

/// Which stages of the pipeline feed the final classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Pseudo-label filtering, pooling and the jointly trained generator.
    Full,
    /// Pseudo-label filtering and pooling; the pooled matrix is classified.
    NoErg,
    /// Plain per-subject average of every window.
    NoTransfer,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [AblationMode::Full, AblationMode::NoErg, AblationMode::NoTransfer];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::NoErg => "no_erg",
            AblationMode::NoTransfer => "no_transfer",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}, expected full, no_erg or no_transfer")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub window: WindowConfig,
    pub c1: usize,
    pub c2: usize,
    /// Width of the classifier's MLP hidden layer.
    pub hidden: usize,
    /// Bottleneck width inside the encoder and decoder.
    pub ae_hidden: usize,
    /// Generator learning rate.
    pub l1: f64,
    /// Classifier learning rate.
    pub l2: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Epochs of target-side training in every fold.
    pub epochs: usize,
    /// Maximum epochs of source training.
    pub transfer_epochs: usize,
    /// Early-stopping patience of source training.
    pub transfer_patience: Option<usize>,
    pub k_folds: usize,
    pub lambda_cos: f64,
    pub lambda_rec: f64,
    pub seed: u64,
    pub mode: AblationMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            window: WindowConfig::default(),
            c1: 16,
            c2: 16,
            hidden: 64,
            ae_hidden: 1024,
            l1: 0.00008,
            l2: 0.00004,
            weight_decay: 0.0005,
            batch_size: 64,
            epochs: 300,
            transfer_epochs: 100,
            transfer_patience: Some(25),
            k_folds: 10,
            lambda_cos: 1.0,
            lambda_rec: 0.1,
            seed: 0,
            mode: AblationMode::Full,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.window.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.k_folds < 2 {
            return Err(Error::Config(format!("k_folds must be >= 2, got {}", self.k_folds)));
        }
        if [self.c1, self.c2, self.hidden, self.ae_hidden].contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        self.target_train().validate()?;
        self.source_train().validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| match Error::from_json(e, &text) {
            Error::Parse { offset, message } => Error::Config(format!("{}: byte {offset}: {message}", path.display())),
            other => other,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn shape(&self, regions: usize) -> ClassifierShape {
        ClassifierShape {
            regions,
            c1: self.c1,
            c2: self.c2,
            hidden: self.hidden,
        }
    }

    pub(crate) fn source_train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.transfer_epochs,
            patience: self.transfer_patience,
            ..self.target_train()
        }
    }

    pub(crate) fn target_train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            classifier_lr: self.l2,
            generator_lr: self.l1,
            weight_decay: self.weight_decay,
            lambda_cos: self.lambda_cos,
            lambda_rec: self.lambda_rec,
            patience: None,
        }
    }
}
