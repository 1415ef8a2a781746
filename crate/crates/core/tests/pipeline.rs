use std::collections::HashSet;

use citl::classifier::ConvClassifierParams;
use citl::dfc::{build_dfc_set, Label, WindowConfig};
use citl::erg::{average_pool, conversion_engine, joint_train, AeParams, ChosenSet, ReconstructionFc};
use citl::nn::Rng;
use citl::pipeline::{
    kfold_split, load_report, run_ablation, run_citl, save_report, synth_cohorts, AblationMode, RunConfig, RunReport,
    SyntheticCohortSpec,
};
use citl::training::TrainConfig;
use citl::Error;

fn small_spec(n: usize) -> SyntheticCohortSpec {
    SyntheticCohortSpec {
        n_subjects_per_class: n,
        time_points: 60,
        regions: 10,
        shared_block: (0..4).collect(),
        source_block: vec![4, 5],
        target_block: vec![6, 7],
        episode_len: 10,
        ..SyntheticCohortSpec::default()
    }
}

fn small_config() -> RunConfig {
    RunConfig {
        window: WindowConfig::new(10, 5).unwrap(),
        c1: 4,
        c2: 4,
        hidden: 8,
        ae_hidden: 16,
        epochs: 20,
        transfer_epochs: 5,
        k_folds: 5,
        seed: 3,
        ..RunConfig::default()
    }
}

#[test]
fn report_shape_echo_and_determinism() {
    let c = synth_cohorts(&small_spec(6), &mut Rng::new(1)).unwrap();
    let cfg = small_config();
    let a = run_citl(&cfg, &c.source, &c.target).unwrap();
    let b = run_citl(&cfg, &c.source, &c.target).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.report.to_json().unwrap(), b.report.to_json().unwrap());
    assert_eq!(a.report.per_fold.len(), cfg.k_folds);
    assert_eq!(a.report.config_echo, cfg);
    assert_eq!(
        a.report.per_fold.iter().map(|f| f.n_test).sum::<usize>(),
        c.target.len()
    );
    for f in &a.report.per_fold {
        assert!((0.0..=1.0).contains(&f.metrics.acc));
    }
}

#[test]
fn one_optimization_matrix_per_target_subject() {
    let c = synth_cohorts(&small_spec(6), &mut Rng::new(2)).unwrap();
    let out = run_citl(&small_config(), &c.source, &c.target).unwrap();
    let ids: HashSet<&str> = out.optimization_fcs.iter().map(|o| o.subject_id.as_str()).collect();
    assert_eq!(out.optimization_fcs.len(), c.target.len());
    assert_eq!(ids.len(), c.target.len());
    for o in &out.optimization_fcs {
        assert!(o.matrix.is_symmetric(0.0));
        assert!((0..o.matrix.rows()).all(|i| o.matrix[(i, i)] == 1.0));
    }
}

#[test]
fn ablation_matches_separate_runs() {
    let c = synth_cohorts(&small_spec(5), &mut Rng::new(4)).unwrap();
    let cfg = small_config();
    let all = run_ablation(&cfg, &c.source, &c.target).unwrap();
    for (mode, joint) in AblationMode::ALL.into_iter().zip(&all) {
        let single = run_citl(&RunConfig { mode, ..cfg.clone() }, &c.source, &c.target).unwrap();
        assert_eq!(&single, joint, "mode {mode}");
    }
    assert!(all[2].optimization_fcs.is_empty());
    assert_eq!(all[2].report.source_val_acc, None);
}

#[test]
fn folds_never_share_subjects() {
    let c = synth_cohorts(&small_spec(10), &mut Rng::new(5)).unwrap();
    let labels: Vec<Label> = c.target.iter().map(|s| s.label).collect();
    let folds = kfold_split(&labels, 10, &mut Rng::new(9)).unwrap();
    for (i, test) in folds.iter().enumerate() {
        let test_ids: HashSet<&str> = test.iter().map(|&k| c.target[k].subject_id.as_str()).collect();
        let train_ids: HashSet<&str> = folds
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .flat_map(|(_, f)| f.iter().map(|&k| c.target[k].subject_id.as_str()))
            .collect();
        assert!(test_ids.is_disjoint(&train_ids));
    }
}

#[test]
fn cohorts_sharing_a_subject_are_rejected() {
    let c = synth_cohorts(&small_spec(5), &mut Rng::new(6)).unwrap();
    let err = run_citl(&small_config(), &c.source, &c.source).unwrap_err();
    assert!(err.to_string().contains("both cohorts"), "{err}");
}

#[test]
fn report_round_trip_and_corruption() {
    let c = synth_cohorts(&small_spec(5), &mut Rng::new(7)).unwrap();
    let cfg = RunConfig {
        mode: AblationMode::NoTransfer,
        ..small_config()
    };
    let report = run_citl(&cfg, &c.source, &c.target).unwrap().report;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    save_report(&report, &path).unwrap();
    let loaded = load_report(&path).unwrap();
    assert_eq!(loaded, report);
    assert_eq!(loaded.to_json().unwrap(), std::fs::read_to_string(&path).unwrap());

    let text = report.to_json().unwrap();
    let cut = &text[..text.len() / 2];
    assert!(matches!(RunReport::from_json(cut), Err(Error::Parse { offset, .. }) if offset > 0));
    let bumped = text.replacen("\"schema_version\": 1", "\"schema_version\": 9", 1);
    assert!(matches!(
        RunReport::from_json(&bumped),
        Err(Error::SchemaVersion { found: 9, expected: 1 })
    ));
}

fn classification_config(mode: AblationMode) -> RunConfig {
    RunConfig {
        c1: 4,
        c2: 4,
        hidden: 8,
        l2: 2e-3,
        epochs: 60,
        k_folds: 5,
        mode,
        ..RunConfig::default()
    }
}

#[test]
fn indistinguishable_classes_score_near_chance() {
    let spec = SyntheticCohortSpec {
        n_subjects_per_class: 40,
        regions: 12,
        patient_window_fraction: 0.2,
        control_window_fraction: 0.2,
        shared_block: (0..5).collect(),
        source_block: vec![5, 6],
        target_block: vec![7, 8],
        ..SyntheticCohortSpec::default()
    };
    let c = synth_cohorts(&spec, &mut Rng::new(8)).unwrap();
    let report = run_citl(&classification_config(AblationMode::NoTransfer), &c.source, &c.target)
        .unwrap()
        .report;
    let acc = report.mean_accuracy();
    assert!((acc - 0.5).abs() <= 0.1, "accuracy {acc}");
}

#[test]
fn persistent_pattern_is_separable() {
    let spec = SyntheticCohortSpec {
        n_subjects_per_class: 20,
        regions: 12,
        patient_window_fraction: 1.0,
        control_window_fraction: 0.0,
        background_fraction: 0.0,
        shared_block: (0..5).collect(),
        source_block: vec![5, 6],
        target_block: vec![7, 8],
        ..SyntheticCohortSpec::default()
    };
    let c = synth_cohorts(&spec, &mut Rng::new(9)).unwrap();
    let report = run_citl(&classification_config(AblationMode::NoTransfer), &c.source, &c.target)
        .unwrap()
        .report;
    assert!(report.mean_accuracy() >= 0.95, "accuracy {}", report.mean_accuracy());
}

#[test]
fn joint_training_loss_decreases_on_planted_cohort() {
    let spec = SyntheticCohortSpec {
        n_subjects_per_class: 20,
        regions: 12,
        patient_window_fraction: 1.0,
        control_window_fraction: 0.0,
        shared_block: (0..5).collect(),
        source_block: vec![5, 6],
        target_block: vec![7, 8],
        ..SyntheticCohortSpec::default()
    };
    let c = synth_cohorts(&spec, &mut Rng::new(10)).unwrap();
    let window = WindowConfig::default();
    let recon: Vec<ReconstructionFc> = c
        .target
        .iter()
        .map(|s| {
            let set = build_dfc_set(s, &window).unwrap();
            ReconstructionFc {
                subject_id: s.subject_id.clone(),
                true_label: s.label,
                matrix: average_pool(&set.matrices).unwrap(),
                chosen_set: ChosenSet::Disease,
                set_sizes: (set.matrices.len(), 0),
            }
        })
        .collect();
    let mut rng = Rng::new(0);
    let shape = small_config().shape(12);
    let ae = AeParams::init(12, 16, &mut rng).unwrap();
    let clf = ConvClassifierParams::init(shape, &mut rng).unwrap();
    let cfg = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    let (_, _, trace) = joint_train(&recon, ae, clf, &cfg, &mut rng).unwrap();
    let totals: Vec<f64> = trace.epochs.iter().map(|l| l.total).collect();
    assert_eq!(totals.len(), 10);
    assert!(totals.windows(2).all(|w| w[1] < w[0]), "{totals:?}");
}

#[test]
fn joint_training_needs_two_subjects_per_class() {
    let c = synth_cohorts(&small_spec(1), &mut Rng::new(11)).unwrap();
    let window = WindowConfig::new(10, 5).unwrap();
    let recon: Vec<ReconstructionFc> = c
        .target
        .iter()
        .map(|s| {
            let set = build_dfc_set(s, &window).unwrap();
            let pl = citl::transfer::PseudoLabeledDfcSet {
                subject_id: s.subject_id.clone(),
                true_label: s.label,
                normal_set: set.matrices,
                disease_set: Vec::new(),
            };
            conversion_engine(&pl).unwrap()
        })
        .collect();
    let mut rng = Rng::new(0);
    let ae = AeParams::init(10, 4, &mut rng).unwrap();
    let clf = ConvClassifierParams::init(small_config().shape(10), &mut rng).unwrap();
    assert!(joint_train(&recon, ae, clf, &TrainConfig::default(), &mut rng).is_err());
}
