//! Planted two-cohort generator.
//!
//! Every region carries unit-variance white noise. The series is cut into
//! consecutive episodes; in a pattern episode the regions of a block share a
//! latent factor, `x = m·f + sqrt(1 − m²)·e`, so every pair inside the block is
//! correlated at about `m²`. Both cohorts share one block (the comorbid
//! pattern) and each has a weaker block of its own, drawn in independent
//! episodes. Outside pattern episodes a block may be weakly engaged, at a
//! per-subject rate that does not depend on diagnosis.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::dfc::{Label, SubjectTimeSeries};
use crate::error::{Error, Result};
use crate::nn::{DenseMatrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticCohortSpec {
    pub n_subjects_per_class: usize,
    pub time_points: usize,
    pub regions: usize,
    /// Regions whose pairs are coupled in both cohorts.
    pub shared_block: Vec<usize>,
    /// Regions coupled only in the source cohort.
    pub source_block: Vec<usize>,
    /// Regions coupled only in the target cohort.
    pub target_block: Vec<usize>,
    /// Probability that an episode of a patient carries the pattern.
    pub patient_window_fraction: f64,
    /// Probability that an episode of a control carries the pattern.
    pub control_window_fraction: f64,
    /// Latent-factor loading `m` of the shared block in a pattern episode.
    pub mixing: f64,
    /// Loading of the cohort-specific block in a pattern episode.
    pub specific_mixing: f64,
    /// Episode length in time points.
    pub episode_len: usize,
    /// Upper bound of a subject's propensity to weakly engage the blocks in a
    /// non-pattern episode; propensities are uniform on `[0, bound]` in both
    /// classes.
    pub background_fraction: f64,
    /// Latent-factor loading of a weak engagement.
    pub background_mixing: f64,
    /// Standard deviation of measurement noise added to every sample.
    pub noise_sd: f64,
}

impl Default for SyntheticCohortSpec {
    fn default() -> Self {
        Self {
            n_subjects_per_class: 40,
            time_points: 176,
            regions: 30,
            shared_block: (0..10).collect(),
            source_block: (10..13).collect(),
            target_block: (13..16).collect(),
            patient_window_fraction: 0.4,
            control_window_fraction: 0.05,
            mixing: 0.8,
            specific_mixing: 0.4,
            episode_len: 16,
            background_fraction: 0.8,
            background_mixing: 0.5,
            noise_sd: 0.0,
        }
    }
}

impl SyntheticCohortSpec {
    pub fn validate(&self) -> Result<()> {
        let r = self.regions;
        if r < 2 || self.time_points < 2 || self.n_subjects_per_class == 0 || self.episode_len == 0 {
            return Err(Error::Config(
                "synthetic spec needs R >= 2, T >= 2, subjects and episodes".into(),
            ));
        }
        for block in [&self.shared_block, &self.source_block, &self.target_block] {
            if block.iter().any(|&i| i >= r) {
                return Err(Error::Config(format!("block {block:?} exceeds {r} regions")));
            }
        }
        for p in [
            self.patient_window_fraction,
            self.control_window_fraction,
            self.mixing,
            self.specific_mixing,
            self.background_fraction,
            self.background_mixing,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!(
                    "fractions and loadings must lie in [0, 1], got {p}"
                )));
            }
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config("noise_sd must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Two labelled cohorts, patients first then controls within each.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohorts {
    pub source: Vec<SubjectTimeSeries>,
    pub target: Vec<SubjectTimeSeries>,
}

pub fn synth_cohorts(spec: &SyntheticCohortSpec, rng: &mut Rng) -> Result<SyntheticCohorts> {
    spec.validate()?;
    let mut cohort = |tag: &str, own_block: &[usize]| -> Vec<SubjectTimeSeries> {
        let mut subjects = Vec::with_capacity(2 * spec.n_subjects_per_class);
        for label in [Label::Disease, Label::Control] {
            let fraction = match label {
                Label::Disease => spec.patient_window_fraction,
                Label::Control => spec.control_window_fraction,
            };
            for i in 0..spec.n_subjects_per_class {
                let prefix = if label == Label::Disease { "p" } else { "c" };
                subjects.push(SubjectTimeSeries {
                    subject_id: format!("{tag}-{prefix}{i:03}"),
                    label,
                    series: subject_series(spec, own_block, fraction, rng),
                });
            }
        }
        subjects
    };
    let source = cohort("src", &spec.source_block);
    let target = cohort("tgt", &spec.target_block);
    Ok(SyntheticCohorts { source, target })
}

fn subject_series(spec: &SyntheticCohortSpec, own_block: &[usize], fraction: f64, rng: &mut Rng) -> DenseMatrix {
    let (t_len, r) = (spec.time_points, spec.regions);
    let mut x = DenseMatrix::zeros(t_len, r);
    x.as_mut_slice().iter_mut().for_each(|v| *v = rng.normal());

    let propensity = rng.uniform(0.0, spec.background_fraction);
    for (block, mixing) in [(&spec.shared_block[..], spec.mixing), (own_block, spec.specific_mixing)] {
        for episode in episodes(t_len, spec.episode_len) {
            if rng.bernoulli(fraction) {
                couple(&mut x, episode, block, mixing, rng);
            } else if rng.bernoulli(propensity) {
                couple(&mut x, episode, block, spec.background_mixing, rng);
            }
        }
    }

    if spec.noise_sd > 0.0 {
        x.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v += spec.noise_sd * rng.normal());
    }
    x
}

fn episodes(t_len: usize, len: usize) -> impl Iterator<Item = Range<usize>> {
    (0..t_len)
        .step_by(len)
        .map(move |start| start..(start + len).min(t_len))
}

/// Replaces `x[t, r]` by `m·f[t] + sqrt(1 − m²)·x[t, r]` for the given rows and
/// regions, keeping unit variance.
fn couple(x: &mut DenseMatrix, rows: Range<usize>, regions: &[usize], m: f64, rng: &mut Rng) {
    if regions.is_empty() || m == 0.0 {
        return;
    }
    let keep = (1.0 - m * m).sqrt();
    let r = x.cols();
    for t in rows {
        let f = rng.normal();
        let row = &mut x.as_mut_slice()[t * r..(t + 1) * r];
        for &i in regions {
            row[i] = m * f + keep * row[i];
        }
    }
}
