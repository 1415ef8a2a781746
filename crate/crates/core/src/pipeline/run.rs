use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{AblationMode, RunConfig};
use super::cv::{compute_metrics, kfold_split, mean_std, MeanStd, Metrics};
use crate::classifier::ConvClassifierParams;
use crate::dfc::{build_dfc_set, DfcSet, Label, SubjectTimeSeries};
use crate::erg::{
    average_pool, conversion_engine, joint_train, vectorize_upper, AeParams, JointModel, OptimizationFc,
    ReconstructionFc,
};
use crate::error::{Error, Result};
use crate::nn::{DenseMatrix, Rng};
use crate::training::train_classifier_epoch;
use crate::transfer::{generate_pseudo_labels, train_transfernet, FrozenModel};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

// Rng stream labels; each stage draws from its own stream of the run seed.
const STREAM_TRANSFER: u64 = 1;
const STREAM_FOLDS: u64 = 2;
const STREAM_CLASSIFIER_INIT: u64 = 100;
const STREAM_GENERATOR_INIT: u64 = 200;
const STREAM_BATCHES: u64 = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_test: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub acc: MeanStd,
    pub sen: MeanStd,
    pub spe: MeanStd,
    pub auc: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub mode: AblationMode,
    pub per_fold: Vec<FoldResult>,
    pub mean_std: MetricSummary,
    /// Window-level validation accuracy of the frozen source model.
    pub source_val_acc: Option<f64>,
    pub config_echo: RunConfig,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn mean_accuracy(&self) -> f64 {
        self.mean_std.acc.mean.unwrap_or(f64::NAN)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            schema_version: u32,
        }
        let v: Version = serde_json::from_str(text).map_err(|e| Error::from_json(e, text))?;
        if v.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: v.schema_version,
                expected: REPORT_SCHEMA_VERSION,
            });
        }
        serde_json::from_str(text).map_err(|e| Error::from_json(e, text))
    }

    /// Percentages with two decimals, one line per metric.
    pub fn summary(&self) -> String {
        let mut out = format!("mode {}  folds {}\n", self.mode, self.per_fold.len());
        let s = &self.mean_std;
        for (name, m) in [("ACC", s.acc), ("SEN", s.sen), ("SPE", s.spe), ("AUC", s.auc)] {
            let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{:.2}", 100.0 * v));
            let _ = writeln!(out, "{name}  {} ± {}", fmt(m.mean), fmt(m.std));
        }
        if let Some(acc) = self.source_val_acc {
            let _ = writeln!(out, "source validation accuracy  {:.2}", 100.0 * acc);
        }
        if !self.warnings.is_empty() {
            let _ = writeln!(out, "{} warnings", self.warnings.len());
        }
        out
    }
}

pub fn save_report(report: &RunReport, path: &Path) -> Result<()> {
    fs::write(path, report.to_json()?)?;
    Ok(())
}

pub fn load_report(path: &Path) -> Result<RunReport> {
    RunReport::from_json(&fs::read_to_string(path)?)
}

/// A report plus, in full mode, each subject's optimisation matrix as
/// generated by the fold in which it was tested.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: RunReport,
    pub optimization_fcs: Vec<OptimizationFc>,
}

/// Target-side inputs shared by every fold.
struct Prepared {
    ids: Vec<String>,
    labels: Vec<Label>,
    recon: Option<Vec<ReconstructionFc>>,
    averaged: Option<Vec<DenseMatrix>>,
    source_val_acc: Option<f64>,
    source_warnings: Vec<String>,
    target_warnings: Vec<String>,
}

fn dfc_sets(cohort: &[SubjectTimeSeries], cfg: &RunConfig, warnings: &mut Vec<String>) -> Result<Vec<DfcSet>> {
    let sets: Vec<DfcSet> = cohort
        .iter()
        .map(|s| build_dfc_set(s, &cfg.window))
        .collect::<Result<_>>()?;
    warnings.extend(sets.iter().flat_map(|s| s.warnings.iter().cloned()));
    Ok(sets)
}

fn check_cohorts(source: &[SubjectTimeSeries], target: &[SubjectTimeSeries]) -> Result<()> {
    let regions = target.first().map(SubjectTimeSeries::regions);
    if let Some(bad) = source.iter().chain(target).find(|s| Some(s.regions()) != regions) {
        return Err(Error::invalid(format!(
            "subject {} has {} regions, expected {}",
            bad.subject_id,
            bad.regions(),
            regions.unwrap_or(0)
        )));
    }
    let source_ids: HashSet<&str> = source.iter().map(|s| s.subject_id.as_str()).collect();
    if let Some(dup) = target.iter().find(|s| source_ids.contains(s.subject_id.as_str())) {
        return Err(Error::invalid(format!(
            "subject {} appears in both cohorts",
            dup.subject_id
        )));
    }
    Ok(())
}

/// Trains the source model on every source subject.
pub fn train_source_model(
    cfg: &RunConfig,
    source: &[SubjectTimeSeries],
    tag: &str,
) -> Result<(FrozenModel, Vec<String>)> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    let sets = dfc_sets(source, cfg, &mut warnings)?;
    let regions = sets.first().map_or(0, DfcSet::regions);
    let mut rng = Rng::stream(cfg.seed, STREAM_TRANSFER);
    let model = train_transfernet(&sets, cfg.shape(regions), &cfg.source_train(), tag, &mut rng)?;
    Ok((model, warnings))
}

fn prepare(
    cfg: &RunConfig,
    source: &[SubjectTimeSeries],
    target: &[SubjectTimeSeries],
    need_recon: bool,
    need_average: bool,
) -> Result<Prepared> {
    check_cohorts(source, target)?;
    let mut target_warnings = Vec::new();
    let target_sets = dfc_sets(target, cfg, &mut target_warnings)?;
    let mut source_warnings = Vec::new();
    let (recon, source_val_acc) = if need_recon {
        let (model, w) = train_source_model(cfg, source, "source")?;
        source_warnings = w;
        let recon = target_sets
            .iter()
            .map(|s| conversion_engine(&generate_pseudo_labels(&model, s)?))
            .collect::<Result<Vec<_>>>()?;
        (Some(recon), Some(model.best_val_acc()))
    } else {
        (None, None)
    };
    let averaged = if need_average {
        Some(
            target_sets
                .iter()
                .map(|s| average_pool(&s.matrices))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok(Prepared {
        ids: target.iter().map(|s| s.subject_id.clone()).collect(),
        labels: target.iter().map(|s| s.label).collect(),
        recon,
        averaged,
        source_val_acc,
        source_warnings,
        target_warnings,
    })
}

/// Runs the configured mode end to end: source training, target features and
/// `k`-fold evaluation on target subjects.
pub fn run_citl(cfg: &RunConfig, source: &[SubjectTimeSeries], target: &[SubjectTimeSeries]) -> Result<RunOutput> {
    cfg.validate()?;
    let mode = cfg.mode;
    let prepared = prepare(
        cfg,
        source,
        target,
        mode != AblationMode::NoTransfer,
        mode == AblationMode::NoTransfer,
    )?;
    evaluate(cfg, mode, &prepared)
}

/// All three modes with one shared source model; identical to three separate
/// [`run_citl`] calls.
pub fn run_ablation(
    cfg: &RunConfig,
    source: &[SubjectTimeSeries],
    target: &[SubjectTimeSeries],
) -> Result<Vec<RunOutput>> {
    cfg.validate()?;
    let prepared = prepare(cfg, source, target, true, true)?;
    AblationMode::ALL
        .into_iter()
        .map(|mode| {
            let cfg = RunConfig { mode, ..cfg.clone() };
            let mut out = evaluate(&cfg, mode, &prepared)?;
            if mode == AblationMode::NoTransfer {
                out.report.source_val_acc = None;
            }
            Ok(out)
        })
        .collect()
}

fn evaluate(cfg: &RunConfig, mode: AblationMode, prepared: &Prepared) -> Result<RunOutput> {
    let folds = kfold_split(&prepared.labels, cfg.k_folds, &mut Rng::stream(cfg.seed, STREAM_FOLDS))?;
    let mut warnings = if mode == AblationMode::NoTransfer {
        Vec::new()
    } else {
        prepared.source_warnings.clone()
    };
    warnings.extend(prepared.target_warnings.iter().cloned());
    let mut per_fold = Vec::with_capacity(folds.len());
    let mut optimization_fcs = Vec::new();

    for (f, test) in folds.iter().enumerate() {
        let train: Vec<usize> = (0..prepared.labels.len()).filter(|i| !test.contains(i)).collect();
        let train_ids: HashSet<&str> = train.iter().map(|&i| prepared.ids[i].as_str()).collect();
        if let Some(&leak) = test.iter().find(|&&i| train_ids.contains(prepared.ids[i].as_str())) {
            return Err(Error::invalid(format!(
                "subject {} is in both train and test of fold {f}",
                prepared.ids[leak]
            )));
        }

        let seed = cfg.seed;
        let fold = f as u64;
        let mut init_rng = Rng::stream(seed, STREAM_CLASSIFIER_INIT + fold);
        let mut batch_rng = Rng::stream(seed, STREAM_BATCHES + fold);
        let regions = prepared.recon.as_ref().map_or_else(
            || prepared.averaged.as_ref().map_or(0, |a| a[0].rows()),
            |r| r[0].matrix.rows(),
        );
        let clf = ConvClassifierParams::init(cfg.shape(regions), &mut init_rng)?;

        let outputs = match mode {
            AblationMode::Full => {
                let recon = prepared.recon.as_ref().expect("prepared with reconstruction");
                let train_set: Vec<ReconstructionFc> = train.iter().map(|&i| recon[i].clone()).collect();
                let ae = AeParams::init(
                    regions,
                    cfg.ae_hidden,
                    &mut Rng::stream(seed, STREAM_GENERATOR_INIT + fold),
                )?;
                let (ae, clf, trace) = joint_train(&train_set, ae, clf, &cfg.target_train(), &mut batch_rng)?;
                if trace.zero_norm_events > 0 {
                    warnings.push(format!(
                        "fold {f}: cosine term undefined for {} zero-norm evaluations",
                        trace.zero_norm_events
                    ));
                }
                let model = JointModel::new(ae, clf)?;
                let mut outs = Vec::with_capacity(test.len());
                for &i in test {
                    outs.push(model.forward(&vectorize_upper(&recon[i].matrix)?)?);
                    optimization_fcs.push(model.ae.optimization_fc(&recon[i])?);
                }
                outs
            }
            AblationMode::NoErg | AblationMode::NoTransfer => {
                let inputs: Vec<&DenseMatrix> = match mode {
                    AblationMode::NoErg => prepared
                        .recon
                        .as_ref()
                        .expect("prepared")
                        .iter()
                        .map(|r| &r.matrix)
                        .collect(),
                    _ => prepared.averaged.as_ref().expect("prepared").iter().collect(),
                };
                let samples: Vec<(&DenseMatrix, Label)> =
                    train.iter().map(|&i| (inputs[i], prepared.labels[i])).collect();
                let train_cfg = cfg.target_train();
                train_cfg.validate()?;
                let adam = train_cfg.classifier_adam();
                let mut clf = clf;
                for _ in 0..train_cfg.epochs {
                    train_classifier_epoch(&mut clf, &samples, train_cfg.batch_size, &adam, &mut batch_rng)?;
                }
                test.iter()
                    .map(|&i| clf.forward(inputs[i]))
                    .collect::<Result<Vec<_>>>()?
            }
        };

        let predicted: Vec<Label> = outputs.iter().map(|o| o.predicted()).collect();
        let scores: Vec<f64> = outputs.iter().map(|o| o.probabilities()[1]).collect();
        let truth: Vec<Label> = test.iter().map(|&i| prepared.labels[i]).collect();
        let metrics = compute_metrics(&predicted, &scores, &truth)?;
        for (name, v) in [
            ("sensitivity", metrics.sen),
            ("specificity", metrics.spe),
            ("auc", metrics.auc),
        ] {
            if v.is_none() {
                warnings.push(format!("fold {f}: {name} undefined"));
            }
        }
        per_fold.push(FoldResult {
            fold: f,
            n_test: test.len(),
            metrics,
        });
    }

    optimization_fcs.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let mean_std = MetricSummary {
        acc: mean_std(per_fold.iter().map(|f| Some(f.metrics.acc))),
        sen: mean_std(per_fold.iter().map(|f| f.metrics.sen)),
        spe: mean_std(per_fold.iter().map(|f| f.metrics.spe)),
        auc: mean_std(per_fold.iter().map(|f| f.metrics.auc)),
    };
    Ok(RunOutput {
        report: RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            mode,
            per_fold,
            mean_std,
            source_val_acc: prepared.source_val_acc,
            config_echo: RunConfig { mode, ..cfg.clone() },
            warnings,
        },
        optimization_fcs,
    })
}
