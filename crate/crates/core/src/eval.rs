//! Labels, cross-validation splits, and binary-classification metrics.

use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("input is empty")]
    Empty,
    #[error("labels are single-class")]
    SingleClass,
    #[error("scores and labels differ in length: {scores} vs {labels}")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score at index {0} is not finite")]
    BadScore(usize),
    #[error("stenosis degree {0} is outside [0, 1]")]
    BadDegree(f64),
    #[error("{n} patients cannot fill {k} folds")]
    TooFewPatients { n: usize, k: usize },
    #[error("fold count must be at least 2, got {0}")]
    BadK(usize),
    #[error("duplicate patient id {0:?}")]
    DuplicatePatient(String),
    #[error("confusion counts are all zero")]
    ZeroCounts,
}

/// Positive revascularization decisions attach to one segment per branch:
/// the segment with the highest stenosis degree, ties resolving to the
/// lowest index. Negative branches label every segment negative.
pub fn propagate_revascularization(branch_positive: bool, degrees: &[f64]) -> Vec<bool> {
    let mut labels = vec![false; degrees.len()];
    if !branch_positive || degrees.is_empty() {
        return labels;
    }
    let mut best = 0usize;
    for (i, &d) in degrees.iter().enumerate().skip(1) {
        if d > degrees[best] {
            best = i;
        }
    }
    labels[best] = true;
    labels
}

/// High-degree stenosis is strictly above 50% narrowing.
pub fn stenosis_binary_label(degree: f64) -> Result<bool, EvalError> {
    if !(0.0..=1.0).contains(&degree) {
        return Err(EvalError::BadDegree(degree));
    }
    Ok(degree > 0.5)
}

pub fn prevalence(labels: &[bool]) -> Result<f64, EvalError> {
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(labels.iter().filter(|&&y| y).count() as f64 / labels.len() as f64)
}

/// Percentage with two decimals, half away from zero: 85/345 renders 24.64.
pub fn percent_2dp(fraction: f64) -> f64 {
    (fraction * 10_000.0).round() / 100.0
}

/// One fold's patient-id partition. `train` and `val` together are the
/// non-test patients; `val` holds 20% of them, stratified like the folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Stratified k-fold partition of patients by a patient-level positive flag.
///
/// Per-fold positive-patient counts differ by at most one across folds, and
/// the test sets partition the patient list. Deterministic in `seed`.
pub fn stratified_patient_kfold(
    patients: &[(String, bool)],
    k: usize,
    seed: u64,
) -> Result<Vec<FoldSplit>, EvalError> {
    if k < 2 {
        return Err(EvalError::BadK(k));
    }
    if patients.len() < k {
        return Err(EvalError::TooFewPatients {
            n: patients.len(),
            k,
        });
    }
    {
        let mut seen = std::collections::HashSet::new();
        for (id, _) in patients {
            if !seen.insert(id) {
                return Err(EvalError::DuplicatePatient(id.clone()));
            }
        }
    }
    use rand::seq::SliceRandom;
    let mut by_class: [Vec<&str>; 2] = [Vec::new(), Vec::new()];
    for (id, pos) in patients {
        by_class[*pos as usize].push(id);
    }
    let mut folds: Vec<Vec<&str>> = vec![Vec::new(); k];
    let mut next = 0usize;
    let [neg_ids, pos_ids] = &mut by_class;
    // Positives deal round-robin first; negatives continue from the same
    // cursor so total fold sizes also stay within one of each other.
    for (class, ids) in [(1usize, pos_ids), (0, neg_ids)] {
        let mut r = rng::stream(seed, "kfold_deal", &[class as u64]);
        ids.shuffle(&mut r);
        for id in ids.iter() {
            folds[next].push(id);
            next = (next + 1) % k;
        }
    }

    let lookup: std::collections::HashMap<&str, bool> = patients
        .iter()
        .map(|(id, pos)| (id.as_str(), *pos))
        .collect();
    let mut out = Vec::with_capacity(k);
    for (f, test_ids) in folds.iter().enumerate() {
        let mut pool: [Vec<&str>; 2] = [Vec::new(), Vec::new()];
        for ids in folds.iter().enumerate().filter(|(g, _)| *g != f).map(|(_, v)| v) {
            for &id in ids {
                pool[lookup[id] as usize].push(id);
            }
        }
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (class, ids) in pool.iter_mut().enumerate() {
            let mut r = rng::stream(seed, "kfold_val", &[f as u64, class as u64]);
            ids.shuffle(&mut r);
            let n_val = ((ids.len() as f64) * 0.2).round() as usize;
            // Keep at least one training patient of each present class.
            let n_val = n_val.min(ids.len().saturating_sub(1));
            for (i, &id) in ids.iter().enumerate() {
                if i < n_val {
                    val.push(id.to_string());
                } else {
                    train.push(id.to_string());
                }
            }
        }
        let mut test: Vec<String> = test_ids.iter().map(|s| s.to_string()).collect();
        train.sort();
        val.sort();
        test.sort();
        out.push(FoldSplit { train, val, test });
    }
    Ok(out)
}

/// Mann-Whitney AUC: the probability that a random positive scores above a
/// random negative, ties counting one half. Computed from midranks.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::BadScore(i));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite"));
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; a tie group shares the average of its ranks.
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let n_pos = n_pos as f64;
    Ok((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }
}

/// Counts predictions at a threshold; predicted positive means strictly
/// above it.
pub fn threshold_scores(scores: &[f64], labels: &[bool], threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&s, &y) in scores.iter().zip(labels) {
        let pred = s > threshold;
        match (pred, y) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_pos += 1,
            (false, false) => c.true_neg += 1,
            (false, true) => c.false_neg += 1,
        }
    }
    c
}

/// Threshold-dependent metrics. A metric whose denominator is zero is
/// reported as 0 and listed in `degenerate`.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub ppv: f64,
    pub npv: f64,
    pub f1: f64,
    pub mcc: f64,
    pub degenerate: Vec<&'static str>,
}

pub fn classification_metrics(c: &ConfusionCounts) -> Result<Metrics, EvalError> {
    if c.total() == 0 {
        return Err(EvalError::ZeroCounts);
    }
    let (tp, fp, tn, fneg) = (
        c.true_pos as f64,
        c.false_pos as f64,
        c.true_neg as f64,
        c.false_neg as f64,
    );
    let mut degenerate = Vec::new();
    let mut ratio = |name: &'static str, num: f64, den: f64| {
        if den == 0.0 {
            degenerate.push(name);
            0.0
        } else {
            num / den
        }
    };
    let accuracy = (tp + tn) / c.total() as f64;
    let sensitivity = ratio("sensitivity", tp, tp + fneg);
    let specificity = ratio("specificity", tn, tn + fp);
    let ppv = ratio("ppv", tp, tp + fp);
    let npv = ratio("npv", tn, tn + fneg);
    let f1 = ratio("f1", 2.0 * ppv * sensitivity, ppv + sensitivity);
    let mcc_den = ((tp + fp) * (tp + fneg) * (tn + fp) * (tn + fneg)).sqrt();
    let mcc = ratio("mcc", tp * tn - fp * fneg, mcc_den);
    Ok(Metrics {
        accuracy,
        sensitivity,
        specificity,
        ppv,
        npv,
        f1,
        mcc,
        degenerate,
    })
}

/// The eight reported metrics for one score set: threshold-free AUC plus
/// the seven threshold-dependent values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub auc: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub ppv: f64,
    pub npv: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub mcc: f64,
}

impl MetricsRow {
    pub const NAMES: [&'static str; 8] = [
        "auc",
        "accuracy",
        "f1",
        "ppv",
        "npv",
        "sensitivity",
        "specificity",
        "mcc",
    ];

    /// Values in [`MetricsRow::NAMES`] order.
    pub fn values(&self) -> [f64; 8] {
        [
            self.auc,
            self.accuracy,
            self.f1,
            self.ppv,
            self.npv,
            self.sensitivity,
            self.specificity,
            self.mcc,
        ]
    }
}

pub fn metrics_row(
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
) -> Result<MetricsRow, EvalError> {
    let auc = roc_auc(scores, labels)?;
    let m = classification_metrics(&threshold_scores(scores, labels, threshold))?;
    Ok(MetricsRow {
        auc,
        accuracy: m.accuracy,
        f1: m.f1,
        ppv: m.ppv,
        npv: m.npv,
        sensitivity: m.sensitivity,
        specificity: m.specificity,
        mcc: m.mcc,
    })
}

/// Pooled and per-fold metric rows for one cross-validated score set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub threshold: f64,
    pub pooled: MetricsRow,
    /// Indexed by fold id; `None` where a fold is empty or single-class.
    pub per_fold: Vec<Option<MetricsRow>>,
}

/// Builds the report from parallel score/label/fold-id arrays. The pooled
/// row covers every sample; fold rows cover the samples tagged with that
/// fold.
pub fn metrics_report(
    scores: &[f64],
    labels: &[bool],
    folds: &[usize],
    threshold: f64,
) -> Result<MetricsReport, EvalError> {
    if scores.len() != labels.len() || scores.len() != folds.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len().min(folds.len()),
        });
    }
    let pooled = metrics_row(scores, labels, threshold)?;
    let n_folds = folds.iter().max().map_or(0, |&m| m + 1);
    let mut per_fold = Vec::with_capacity(n_folds);
    for f in 0..n_folds {
        let mut s = Vec::new();
        let mut l = Vec::new();
        for i in 0..scores.len() {
            if folds[i] == f {
                s.push(scores[i]);
                l.push(labels[i]);
            }
        }
        per_fold.push(metrics_row(&s, &l, threshold).ok());
    }
    Ok(MetricsReport {
        threshold,
        pooled,
        per_fold,
    })
}
