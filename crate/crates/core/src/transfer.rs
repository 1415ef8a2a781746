//! Source-cohort training, model freezing and window pseudo-labelling.
//!
//! The source classifier is fit on every window of every training subject,
//! each window inheriting its subject's diagnosis. Subjects (never windows) are
//! split 80:20 per class into training and validation, and the epoch with the
//! best window-level validation accuracy is frozen. The frozen model then
//! routes each target window into a normal or a disease set.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierShape, ConvClassifierParams};
use crate::dfc::{DfcSet, Label};
use crate::error::{Error, Result};
use crate::nn::{DenseMatrix, Rng};
use crate::training::{accuracy, train_classifier_epoch, TrainConfig};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Immutable snapshot of a trained classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenModel {
    params: ConvClassifierParams,
    source_tag: String,
    best_val_acc: f64,
}

impl FrozenModel {
    pub fn new(params: ConvClassifierParams, source_tag: impl Into<String>, best_val_acc: f64) -> Self {
        Self {
            params,
            source_tag: source_tag.into(),
            best_val_acc,
        }
    }

    pub fn params(&self) -> &ConvClassifierParams {
        &self.params
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn best_val_acc(&self) -> f64 {
        self.best_val_acc
    }

    pub fn regions(&self) -> usize {
        self.params.shape().regions
    }

    /// Pseudo-label of one window: argmax of the logits, ties to control.
    pub fn predict_window(&self, dfc: &DenseMatrix) -> Result<Label> {
        Ok(self.params.forward(dfc)?.predicted())
    }

    pub fn to_json(&self) -> Result<String> {
        let p = &self.params;
        let doc = CheckpointDoc {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            source_tag: self.source_tag.clone(),
            best_val_acc: self.best_val_acc,
            shapes: p.shape(),
            params: CheckpointParams {
                w1: p.w1.value.clone(),
                b1: p.b1.value.clone(),
                w2: p.w2.value.clone(),
                b2: p.b2.value.clone(),
                mlp_w1: p.mlp_w1.value.clone(),
                mlp_b1: p.mlp_b1.value.clone(),
                mlp_w2: p.mlp_w2.value.clone(),
                mlp_b2: p.mlp_b2.value.clone(),
            },
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Numeric(format!("cannot serialise checkpoint: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::from_json(e, text))?;
        let found = value.get("schema_version").and_then(serde_json::Value::as_u64);
        match found {
            Some(v) if v == u64::from(CHECKPOINT_SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(Error::SchemaVersion {
                    found: v as u32,
                    expected: CHECKPOINT_SCHEMA_VERSION,
                })
            }
            None => {
                return Err(Error::Parse {
                    offset: 0,
                    message: "missing `schema_version`".into(),
                })
            }
        }
        let doc: CheckpointDoc = serde_json::from_str(text).map_err(|e| Error::from_json(e, text))?;
        let ps = doc.params;
        let params = ConvClassifierParams::from_values(
            doc.shapes,
            [ps.w1, ps.b1, ps.w2, ps.b2, ps.mlp_w1, ps.mlp_b1, ps.mlp_w2, ps.mlp_b2],
        )?;
        Ok(Self::new(params, doc.source_tag, doc.best_val_acc))
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    schema_version: u32,
    source_tag: String,
    best_val_acc: f64,
    shapes: ClassifierShape,
    params: CheckpointParams,
}

#[derive(Serialize, Deserialize)]
struct CheckpointParams {
    w1: DenseMatrix,
    b1: DenseMatrix,
    w2: DenseMatrix,
    b2: DenseMatrix,
    mlp_w1: DenseMatrix,
    mlp_b1: DenseMatrix,
    mlp_w2: DenseMatrix,
    mlp_b2: DenseMatrix,
}

pub fn save_checkpoint(model: &FrozenModel, path: &Path) -> Result<()> {
    fs::write(path, model.to_json()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<FrozenModel> {
    let text = fs::read_to_string(path)?;
    FrozenModel::from_json(&text)
}

/// Indices into the subject list, split for source training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Per class, `round(0.2·n)` subjects (at least one, at most `n − 1`) go to
/// validation. Both lists are returned sorted.
pub fn stratified_split(labels: &[Label], validation_fraction: f64, rng: &mut Rng) -> Result<SubjectSplit> {
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for class in [Label::Control, Label::Disease] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < 2 {
            return Err(Error::invalid(format!(
                "source training needs at least 2 subjects per class, class {} has {}",
                class.index(),
                members.len()
            )));
        }
        rng.shuffle(&mut members);
        let n_val = ((members.len() as f64 * validation_fraction).round() as usize).clamp(1, members.len() - 1);
        validation.extend_from_slice(&members[..n_val]);
        train.extend_from_slice(&members[n_val..]);
    }
    train.sort_unstable();
    validation.sort_unstable();
    Ok(SubjectSplit { train, validation })
}

/// Per-epoch record of source training.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferTrace {
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub best_epoch: usize,
    pub split: SubjectSplit,
}

pub fn train_transfernet(
    dfc_sets: &[DfcSet],
    shape: ClassifierShape,
    cfg: &TrainConfig,
    source_tag: &str,
    rng: &mut Rng,
) -> Result<FrozenModel> {
    train_transfernet_traced(dfc_sets, shape, cfg, source_tag, rng).map(|(m, _)| m)
}

pub fn train_transfernet_traced(
    dfc_sets: &[DfcSet],
    shape: ClassifierShape,
    cfg: &TrainConfig,
    source_tag: &str,
    rng: &mut Rng,
) -> Result<(FrozenModel, TransferTrace)> {
    cfg.validate()?;
    if let Some(bad) = dfc_sets.iter().find(|s| s.regions() != shape.regions) {
        return Err(Error::invalid(format!(
            "subject {} has {} regions, model expects {}",
            bad.subject_id,
            bad.regions(),
            shape.regions
        )));
    }
    let labels: Vec<Label> = dfc_sets.iter().map(|s| s.label).collect();
    let split = stratified_split(&labels, 0.2, rng)?;

    let windows = |idx: &[usize]| -> Vec<(&DenseMatrix, Label)> {
        idx.iter()
            .flat_map(|&i| dfc_sets[i].matrices.iter().map(move |m| (m, dfc_sets[i].label)))
            .collect()
    };
    let train = windows(&split.train);
    let validation = windows(&split.validation);

    let mut params = ConvClassifierParams::init(shape, rng)?;
    let adam = cfg.classifier_adam();
    let mut best: Option<(f64, usize, ConvClassifierParams)> = None;
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut val_accuracy = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        train_loss.push(train_classifier_epoch(&mut params, &train, cfg.batch_size, &adam, rng)?);
        let acc = accuracy(&params, &validation)?;
        val_accuracy.push(acc);
        if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
            best = Some((acc, epoch, params.clone()));
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.1);
        if cfg.patience.is_some_and(|p| epoch - best_epoch >= p) {
            break;
        }
    }

    let (best_val_acc, best_epoch, best_params) = match best {
        Some(b) => b,
        None => {
            let acc = accuracy(&params, &validation)?;
            (acc, 0, params)
        }
    };
    let model = FrozenModel::new(best_params, source_tag, best_val_acc);
    let trace = TransferTrace {
        train_loss,
        val_accuracy,
        best_epoch,
        split,
    };
    Ok((model, trace))
}

/// A target subject's windows partitioned by pseudo-label, order preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeledDfcSet {
    pub subject_id: String,
    pub true_label: Label,
    pub normal_set: Vec<DenseMatrix>,
    pub disease_set: Vec<DenseMatrix>,
}

impl PseudoLabeledDfcSet {
    pub fn len(&self) -> usize {
        self.normal_set.len() + self.disease_set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn generate_pseudo_labels(model: &FrozenModel, target: &DfcSet) -> Result<PseudoLabeledDfcSet> {
    if !target.matrices.is_empty() && target.regions() != model.regions() {
        return Err(Error::invalid(format!(
            "subject {} has {} regions, model expects {}",
            target.subject_id,
            target.regions(),
            model.regions()
        )));
    }
    let mut normal_set = Vec::new();
    let mut disease_set = Vec::new();
    for m in &target.matrices {
        match model.predict_window(m)? {
            Label::Control => normal_set.push(m.clone()),
            Label::Disease => disease_set.push(m.clone()),
        }
    }
    Ok(PseudoLabeledDfcSet {
        subject_id: target.subject_id.clone(),
        true_label: target.label,
        normal_set,
        disease_set,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(r: usize) -> ClassifierShape {
        ClassifierShape {
            regions: r,
            c1: 3,
            c2: 3,
            hidden: 4,
        }
    }

    #[test]
    fn split_is_stratified_80_20() {
        let labels: Vec<Label> = (0..10).map(|i| Label::from_index(i % 2).unwrap()).collect();
        let split = stratified_split(&labels, 0.2, &mut Rng::new(0)).unwrap();
        assert_eq!(split.train.len(), 8);
        assert_eq!(split.validation.len(), 2);
        let val_labels: Vec<Label> = split.validation.iter().map(|&i| labels[i]).collect();
        assert!(val_labels.contains(&Label::Control) && val_labels.contains(&Label::Disease));
        assert!(split.train.iter().all(|i| !split.validation.contains(i)));
    }

    #[test]
    fn split_rejects_single_class() {
        let labels = vec![Label::Disease; 6];
        assert!(matches!(
            stratified_split(&labels, 0.2, &mut Rng::new(0)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn zero_model_routes_everything_to_normal() {
        let model = FrozenModel::new(ConvClassifierParams::zeros(shape(4)).unwrap(), "zero", 0.5);
        let set = DfcSet {
            subject_id: "t".into(),
            label: Label::Disease,
            matrices: vec![DenseMatrix::zeros(4, 4); 7],
            warnings: vec![],
        };
        let pl = generate_pseudo_labels(&model, &set).unwrap();
        assert_eq!(pl.normal_set.len(), 7);
        assert!(pl.disease_set.is_empty());
        assert_eq!(model.predict_window(&DenseMatrix::identity(4)).unwrap(), Label::Control);
    }

    #[test]
    fn region_mismatch_rejected() {
        let model = FrozenModel::new(ConvClassifierParams::zeros(shape(4)).unwrap(), "zero", 0.5);
        let set = DfcSet {
            subject_id: "t".into(),
            label: Label::Control,
            matrices: vec![DenseMatrix::identity(5)],
            warnings: vec![],
        };
        assert!(generate_pseudo_labels(&model, &set).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = Rng::new(3);
        let mut params = ConvClassifierParams::init(shape(5), &mut rng).unwrap();
        params.mlp_b2.value[(0, 1)] = 0.1 + 0.2;
        params.b1.value[(0, 0)] = f64::MIN_POSITIVE;
        let model = FrozenModel::new(params, "src", 0.8125);
        let text = model.to_json().unwrap();
        let back = FrozenModel::from_json(&text).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn checkpoint_schema_mismatch() {
        let model = FrozenModel::new(ConvClassifierParams::zeros(shape(3)).unwrap(), "src", 0.5);
        let text = model
            .to_json()
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 7");
        assert!(matches!(
            FrozenModel::from_json(&text),
            Err(Error::SchemaVersion { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn corrupted_checkpoint_reports_offset() {
        let model = FrozenModel::new(ConvClassifierParams::zeros(shape(3)).unwrap(), "src", 0.5);
        let text = model.to_json().unwrap();
        let cut = &text[..text.len() / 2];
        match FrozenModel::from_json(cut) {
            Err(Error::Parse { offset, .. }) => assert!(offset <= cut.len()),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad_shape = text.replacen("\"rows\": 3", "\"rows\": 4", 1);
        assert!(FrozenModel::from_json(&bad_shape).is_err());
    }
}
