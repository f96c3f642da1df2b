//! Evaluation metrics: macro balanced accuracy, macro ROC AUC and mean average
//! precision, plus an audit of pseudo-label quality against ground truth.
//!
//! Classes lacking either positives or negatives in the evaluation set are
//! skipped (with a warning) by every macro average.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::ledger::PseudoLabelLedger;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassRates {
    pub sensitivity: f64,
    pub specificity: f64,
    pub bacc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaccReport {
    pub bacc: f64,
    /// `None` for classes skipped for lack of both labels.
    pub per_class: Vec<Option<ClassRates>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub mean: f64,
    pub per_class: Vec<Option<f64>>,
}

/// Everything reported for one evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bacc: f64,
    pub auc: f64,
    pub map: f64,
    pub per_class_auc: Vec<Option<f64>>,
    pub per_class_ap: Vec<Option<f64>>,
    pub per_class_rates: Vec<Option<ClassRates>>,
    pub threshold: f64,
}

fn check(scores: &ArrayView2<f64>, truth: &ArrayView2<f64>) -> Result<()> {
    if scores.dim() != truth.dim() {
        return Err(FedError::Dimension(format!(
            "scores {:?} vs truth {:?}",
            scores.dim(),
            truth.dim()
        )));
    }
    if scores.nrows() == 0 {
        return Err(FedError::Domain("empty evaluation set".into()));
    }
    if truth.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(FedError::Domain("truth labels must be 0 or 1".into()));
    }
    Ok(())
}

fn two_sided(truth: &[f64]) -> bool {
    let pos = truth.iter().filter(|&&y| y == 1.0).count();
    pos > 0 && pos < truth.len()
}

fn macro_mean(values: impl Iterator<Item = Option<f64>>) -> Result<f64> {
    let (sum, n) = values
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return Err(FedError::Domain("no class has both positive and negative samples".into()));
    }
    Ok(sum / n as f64)
}

fn warn_skipped(metric: &str, skipped: &[usize]) {
    if !skipped.is_empty() {
        tracing::warn!(metric, ?skipped, "classes without both labels were skipped");
    }
}

pub fn balanced_accuracy(
    probs: ArrayView2<f64>,
    truth: ArrayView2<f64>,
    threshold: f64,
) -> Result<BaccReport> {
    check(&probs, &truth)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(FedError::Config(format!("threshold {threshold} outside (0, 1)")));
    }
    let mut skipped = Vec::new();
    let per_class: Vec<Option<ClassRates>> = (0..probs.ncols())
        .map(|c| {
            let (mut tp, mut fn_, mut tn, mut fp) = (0usize, 0usize, 0usize, 0usize);
            for (&p, &y) in probs.column(c).iter().zip(truth.column(c)) {
                match (p >= threshold, y == 1.0) {
                    (true, true) => tp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => tn += 1,
                    (true, false) => fp += 1,
                }
            }
            if tp + fn_ == 0 || tn + fp == 0 {
                skipped.push(c);
                return None;
            }
            let sensitivity = tp as f64 / (tp + fn_) as f64;
            let specificity = tn as f64 / (tn + fp) as f64;
            Some(ClassRates {
                sensitivity,
                specificity,
                bacc: (sensitivity + specificity) / 2.0,
            })
        })
        .collect();
    warn_skipped("bacc", &skipped);
    let bacc = macro_mean(per_class.iter().map(|r| r.map(|r| r.bacc)))?;
    Ok(BaccReport { bacc, per_class })
}

/// Mann-Whitney AUC of one column; ties between a positive and a negative
/// count one half.
fn column_auc(scores: &[f64], truth: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // Midranks over tie groups, 1-based.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if truth[k] == 1.0 {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    let n_pos = truth.iter().filter(|&&y| y == 1.0).count() as f64;
    let n_neg = truth.len() as f64 - n_pos;
    (rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

pub fn auc(scores: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<ClassScores> {
    per_column(scores, truth, "auc", column_auc)
}

/// Average precision of one column: ranks by descending score, ties by
/// ascending index, and averages precision at each positive.
fn column_ap(scores: &[f64], truth: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &k) in idx.iter().enumerate() {
        if truth[k] == 1.0 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    sum / hits as f64
}

pub fn mean_average_precision(scores: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<ClassScores> {
    per_column(scores, truth, "ap", column_ap)
}

fn per_column(
    scores: ArrayView2<f64>,
    truth: ArrayView2<f64>,
    metric: &str,
    f: fn(&[f64], &[f64]) -> f64,
) -> Result<ClassScores> {
    check(&scores, &truth)?;
    let mut skipped = Vec::new();
    let per_class: Vec<Option<f64>> = (0..scores.ncols())
        .map(|c| {
            let s: Vec<f64> = scores.column(c).to_vec();
            let y: Vec<f64> = truth.column(c).to_vec();
            if two_sided(&y) {
                Some(f(&s, &y))
            } else {
                skipped.push(c);
                None
            }
        })
        .collect();
    warn_skipped(metric, &skipped);
    let mean = macro_mean(per_class.iter().copied())?;
    Ok(ClassScores { mean, per_class })
}

pub fn evaluate(probs: ArrayView2<f64>, truth: ArrayView2<f64>, threshold: f64) -> Result<EvalReport> {
    let b = balanced_accuracy(probs, truth, threshold)?;
    let a = auc(probs, truth)?;
    let m = mean_average_precision(probs, truth)?;
    Ok(EvalReport {
        bacc: b.bacc,
        auc: a.mean,
        map: m.mean,
        per_class_auc: a.per_class,
        per_class_ap: m.per_class,
        per_class_rates: b.per_class,
        threshold,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassAudit {
    pub tagged0: usize,
    pub correct0: usize,
    pub tagged1: usize,
    pub correct1: usize,
    /// Ledger entries (sample, class) whose truth is positive / negative.
    pub truth_pos: usize,
    pub truth_neg: usize,
}

impl ClassAudit {
    pub fn precision(&self) -> Option<f64> {
        let t = self.tagged0 + self.tagged1;
        (t > 0).then(|| (self.correct0 + self.correct1) as f64 / t as f64)
    }

    pub fn precision1(&self) -> Option<f64> {
        (self.tagged1 > 0).then(|| self.correct1 as f64 / self.tagged1 as f64)
    }

    pub fn precision0(&self) -> Option<f64> {
        (self.tagged0 > 0).then(|| self.correct0 as f64 / self.tagged0 as f64)
    }

    /// Share of truly positive entries that carry a correct positive tag.
    pub fn recall1(&self) -> Option<f64> {
        (self.truth_pos > 0).then(|| self.correct1 as f64 / self.truth_pos as f64)
    }

    pub fn recall0(&self) -> Option<f64> {
        (self.truth_neg > 0).then(|| self.correct0 as f64 / self.truth_neg as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub per_class: BTreeMap<usize, ClassAudit>,
    /// Tagged share of all ledger entries, in `[0, 1]`.
    pub coverage: f64,
    pub entries: usize,
    pub tagged: usize,
}

impl AuditReport {
    pub fn precision(&self) -> Option<f64> {
        let (t, ok) = self.per_class.values().fold((0, 0), |(t, ok), a| {
            (t + a.tagged0 + a.tagged1, ok + a.correct0 + a.correct1)
        });
        (t > 0).then(|| ok as f64 / t as f64)
    }
}

/// Compare every client's tags with the retained ground truth.
pub fn pseudo_label_audit<'a>(
    clients: impl IntoIterator<Item = (&'a PseudoLabelLedger, ArrayView2<'a, f64>)>,
) -> Result<AuditReport> {
    let mut report = AuditReport::default();
    for (ledger, truth) in clients {
        if truth.nrows() != ledger.samples() {
            return Err(FedError::Dimension(format!(
                "ledger has {} samples, truth {}",
                ledger.samples(),
                truth.nrows()
            )));
        }
        report.entries += ledger.total_entries();
        for &c in ledger.classes() {
            let a = report.per_class.entry(c).or_default();
            for i in 0..ledger.samples() {
                let positive = truth[[i, c]] == 1.0;
                if positive {
                    a.truth_pos += 1;
                } else {
                    a.truth_neg += 1;
                }
                match ledger.get(i, c) {
                    Some(t) if t.value == 1 => {
                        a.tagged1 += 1;
                        a.correct1 += usize::from(positive);
                    }
                    Some(_) => {
                        a.tagged0 += 1;
                        a.correct0 += usize::from(!positive);
                    }
                    None => {}
                }
            }
        }
        report.tagged += ledger.tagged_count();
    }
    report.per_class.retain(|_, a| a.tagged0 + a.tagged1 > 0);
    report.coverage = if report.entries == 0 {
        0.0
    } else {
        report.tagged as f64 / report.entries as f64
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn bacc_cases() {
        let y = array![[1.0], [0.0], [1.0], [0.0]];
        let perfect = balanced_accuracy(y.view(), y.view(), 0.5).unwrap();
        assert_eq!(perfect.bacc, 1.0);
        let zeros = Array2::from_elem((4, 1), 0.1);
        let r = balanced_accuracy(zeros.view(), y.view(), 0.5).unwrap();
        assert_eq!(r.bacc, 0.5);
        assert_eq!(r.per_class[0].unwrap().sensitivity, 0.0);
        assert_eq!(r.per_class[0].unwrap().specificity, 1.0);
        let p = array![[0.9], [0.6], [0.4], [0.1]];
        let r = balanced_accuracy(p.view(), y.view(), 0.5).unwrap();
        let rates = r.per_class[0].unwrap();
        assert_eq!((rates.sensitivity, rates.specificity, r.bacc), (0.5, 0.5, 0.5));
    }

    #[test]
    fn bacc_skips_one_sided_and_rejects_empty() {
        let p = array![[0.9, 0.9], [0.1, 0.1]];
        let y = array![[1.0, 1.0], [0.0, 1.0]];
        let r = balanced_accuracy(p.view(), y.view(), 0.5).unwrap();
        assert!(r.per_class[1].is_none());
        assert_eq!(r.bacc, 1.0);
        let e = Array2::<f64>::zeros((0, 2));
        assert!(matches!(
            balanced_accuracy(e.view(), e.view(), 0.5),
            Err(FedError::Domain(_))
        ));
    }

    #[test]
    fn auc_cases() {
        let y = array![[1.0], [0.0], [0.0]];
        assert_eq!(auc(array![[0.9], [0.2], [0.1]].view(), y.view()).unwrap().mean, 1.0);
        assert_eq!(auc(Array2::from_elem((3, 1), 0.4).view(), y.view()).unwrap().mean, 0.5);
        assert_eq!(auc(array![[0.8], [0.8], [0.3]].view(), y.view()).unwrap().mean, 0.75);
    }

    #[test]
    fn ap_cases() {
        let y = array![[1.0], [1.0], [0.0], [0.0]];
        let s = array![[0.9], [0.8], [0.2], [0.1]];
        assert_eq!(mean_average_precision(s.view(), y.view()).unwrap().mean, 1.0);
        let y = array![[0.0], [1.0], [0.0], [0.0]];
        assert_eq!(mean_average_precision(s.view(), y.view()).unwrap().mean, 0.5);
    }

    #[test]
    fn audit_counts() {
        let mut l = PseudoLabelLedger::new(4, 2, &[1]);
        let empty = pseudo_label_audit([(&l, Array2::zeros((4, 2)).view())]).unwrap();
        assert_eq!(empty.coverage, 0.0);
        assert!(empty.per_class.is_empty());
        assert_eq!(empty.precision(), None);

        let truth = array![[0., 1.], [0., 1.], [0., 0.], [0., 0.]];
        l.tag(0, 1, 1, 3).unwrap();
        l.tag(1, 1, 1, 3).unwrap();
        l.tag(2, 1, 0, 3).unwrap();
        l.tag(3, 1, 1, 3).unwrap();
        let r = pseudo_label_audit([(&l, truth.view())]).unwrap();
        assert_eq!(r.precision(), Some(0.75));
        assert_eq!(r.coverage, 1.0);
        let a = &r.per_class[&1];
        assert_eq!(a.precision1(), Some(2.0 / 3.0));
        assert_eq!(a.recall1(), Some(1.0));
    }
}
