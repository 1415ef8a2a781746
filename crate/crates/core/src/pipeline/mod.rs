//! Orchestration and evaluation: synthetic cohorts, end-to-end runs under
//! subject-level k-fold cross-validation, ablation modes, metrics and reports.

mod config;
mod cv;
mod run;
mod synth;

pub use config::{AblationMode, RunConfig};
pub use cv::{compute_metrics, kfold_split, mean_std, MeanStd, Metrics};
pub use run::{
    load_report, run_ablation, run_citl, save_report, train_source_model, FoldResult, MetricSummary, RunOutput,
    RunReport, REPORT_SCHEMA_VERSION,
};
pub use synth::{synth_cohorts, SyntheticCohortSpec, SyntheticCohorts};
