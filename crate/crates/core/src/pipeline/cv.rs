use serde::{Deserialize, Serialize};

use crate::dfc::Label;
use crate::error::{Error, Result};
use crate::nn::Rng;

/// Stratified subject-level folds: each class is shuffled and dealt round
/// robin, the second class continuing where the first stopped so total fold
/// sizes also differ by at most one. Each fold is returned sorted.
pub fn kfold_split(labels: &[Label], k: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be >= 2, got {k}")));
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for class in [Label::Control, Label::Disease] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(Error::invalid(format!(
                "{k}-fold split needs at least {k} subjects per class, class {} has {}",
                class.index(),
                members.len()
            )));
        }
        rng.shuffle(&mut members);
        for i in members {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

/// Classification metrics; `None` where a class is absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub sen: Option<f64>,
    pub spe: Option<f64>,
    pub auc: Option<f64>,
}

/// Accuracy, sensitivity, specificity and the rank-statistic AUC of `scores`
/// (higher means disease), ties counted one half.
pub fn compute_metrics(predicted: &[Label], scores: &[f64], truth: &[Label]) -> Result<Metrics> {
    let n = truth.len();
    if n == 0 || predicted.len() != n || scores.len() != n {
        return Err(Error::invalid(format!(
            "metrics need equal non-empty lengths, got {} predictions, {} scores, {} labels",
            predicted.len(),
            scores.len(),
            n
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let (mut tp, mut tn, mut fp, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in predicted.iter().zip(truth) {
        match (t, p) {
            (Label::Disease, Label::Disease) => tp += 1,
            (Label::Disease, Label::Control) => fneg += 1,
            (Label::Control, Label::Control) => tn += 1,
            (Label::Control, Label::Disease) => fp += 1,
        }
    }
    let ratio = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
    Ok(Metrics {
        acc: (tp + tn) as f64 / n as f64,
        sen: ratio(tp, fneg),
        spe: ratio(tn, fp),
        auc: rank_auc(scores, truth),
    })
}

fn rank_auc(scores: &[f64], truth: &[Label]) -> Option<f64> {
    let n_pos = truth.iter().filter(|&&t| t == Label::Disease).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of doubled mid-ranks of positives; integers keep it exact.
    let mut rank_sum2 = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1, mid-rank (i + j + 2) / 2.
        let mid2 = (i + j + 2) as u64;
        let pos = order[i..=j].iter().filter(|&&k| truth[k] == Label::Disease).count() as u64;
        rank_sum2 += pos * mid2;
        i = j + 1;
    }
    let n_pos = n_pos as u64;
    let u2 = rank_sum2 - n_pos * (n_pos + 1);
    Some(u2 as f64 / (2 * n_pos * n_neg as u64) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: Option<f64>,
    /// Sample standard deviation; `None` with fewer than two values.
    pub std: Option<f64>,
}

/// Mean and sample standard deviation of the defined values.
pub fn mean_std(values: impl IntoIterator<Item = Option<f64>>) -> MeanStd {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    if v.is_empty() {
        return MeanStd { mean: None, std: None };
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.len() > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    MeanStd { mean: Some(mean), std }
}
