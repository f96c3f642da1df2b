//! Training objectives: plain multi-label BCE, the weighted partial-class
//! loss with multi-label logit adjustment, and the MSE consistency term.
//!
//! Every loss takes sigmoid probabilities and returns its gradient with respect
//! to the pre-sigmoid logits, averaged over the batch.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};

/// Smoothing applied to positive rates so the adjustment stays defined.
pub const PRIOR_EPS: f64 = 1e-3;

/// Clamp applied to probabilities before taking logs.
pub const LOG_CLAMP: f64 = 1e-7;

/// Per-class positive/negative rates used by the multi-label logit adjustment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPriors {
    pub pi1: Vec<f64>,
    pub pi0: Vec<f64>,
    /// Exponent on the priors; 1 reproduces the plain adjustment.
    pub la_tau: f64,
    /// Classes whose prior fell back to 0.5 for lack of supervised entries.
    #[serde(default)]
    pub defaulted: Vec<usize>,
}

impl ClassPriors {
    /// Priors from raw positive rates. Rates of exactly 0 or 1 are rejected.
    pub fn new(pi1: Vec<f64>, la_tau: f64) -> Result<Self> {
        for (class, &p) in pi1.iter().enumerate() {
            if !(p > 0.0 && p < 1.0) {
                return Err(FedError::DegeneratePrior { class, value: p });
            }
        }
        let pi0 = pi1.iter().map(|p| 1.0 - p).collect();
        Ok(Self {
            pi1,
            pi0,
            la_tau,
            defaulted: Vec::new(),
        })
    }

    /// Balanced priors; the adjustment is then the identity.
    pub fn balanced(classes: usize) -> Self {
        Self {
            pi1: vec![0.5; classes],
            pi0: vec![0.5; classes],
            la_tau: 1.0,
            defaulted: Vec::new(),
        }
    }

    /// Priors from `(positives, supervised)` counts per class, clamped to
    /// `[PRIOR_EPS, 1 - PRIOR_EPS]`. Classes with no supervised entries get 0.5.
    pub fn from_counts(counts: &[(usize, usize)], la_tau: f64) -> Self {
        let mut defaulted = Vec::new();
        let pi1: Vec<f64> = counts
            .iter()
            .enumerate()
            .map(|(c, &(pos, total))| {
                if total == 0 {
                    defaulted.push(c);
                    0.5
                } else {
                    (pos as f64 / total as f64).clamp(PRIOR_EPS, 1.0 - PRIOR_EPS)
                }
            })
            .collect();
        let pi0 = pi1.iter().map(|p| 1.0 - p).collect();
        Self {
            pi1,
            pi0,
            la_tau,
            defaulted,
        }
    }

    pub fn classes(&self) -> usize {
        self.pi1.len()
    }

    fn is_identity(&self, c: usize) -> bool {
        self.pi1[c] == self.pi0[c] || self.la_tau == 0.0
    }

    fn weights(&self, c: usize) -> (f64, f64) {
        if self.la_tau == 1.0 {
            (self.pi1[c], self.pi0[c])
        } else {
            (self.pi1[c].powf(self.la_tau), self.pi0[c].powf(self.la_tau))
        }
    }
}

/// Multi-label logit adjustment: `q = p*pi1 / (p*pi1 + (1-p)*pi0)` per class.
pub fn adjust_probs(probs: ArrayView2<f64>, priors: &ClassPriors) -> Result<Array2<f64>> {
    if probs.ncols() != priors.classes() {
        return Err(FedError::Dimension(format!(
            "{} probability columns vs {} priors",
            probs.ncols(),
            priors.classes()
        )));
    }
    for (class, &p) in priors.pi1.iter().enumerate() {
        if !(p > 0.0 && p < 1.0) {
            return Err(FedError::DegeneratePrior { class, value: p });
        }
    }
    let mut out = probs.to_owned();
    for (c, mut col) in out.columns_mut().into_iter().enumerate() {
        if priors.is_identity(c) {
            continue;
        }
        let (a, b) = priors.weights(c);
        col.mapv_inplace(|p| {
            let num = p * a;
            num / (num + (1.0 - p) * b)
        });
    }
    Ok(out)
}

/// A scalar loss and its gradient wrt logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_logits: Array2<f64>,
}

impl LossOutput {
    fn zero(dim: (usize, usize)) -> Self {
        Self {
            value: 0.0,
            grad_logits: Array2::zeros(dim),
        }
    }
}

/// Normalizer for the partial-class loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WpcNormalizer {
    /// Divide each sample's sum by the total class count.
    #[default]
    Classes,
    /// Divide each sample's sum by its number of supervised entries.
    Active,
}

fn check_same(a: &ArrayView2<f64>, b: &ArrayView2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(FedError::Dimension(format!(
            "{what}: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

fn check_binary(m: &ArrayView2<f64>, what: &str) -> Result<()> {
    if m.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(FedError::Domain(format!("{what} must be 0 or 1")));
    }
    Ok(())
}

fn xent(q: f64, y: f64) -> f64 {
    let q = q.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP);
    -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
}

/// Shared cross-entropy kernel over (possibly adjusted) probabilities `q`.
/// Entries with `mask == 0` contribute nothing and keep a zero gradient.
fn masked_xent(
    q: ArrayView2<f64>,
    labels: ArrayView2<f64>,
    mask: Option<ArrayView2<f64>>,
    normalizer: WpcNormalizer,
) -> LossOutput {
    let (n, c) = q.dim();
    let mut out = LossOutput::zero((n, c));
    if n == 0 || c == 0 {
        return out;
    }
    let on = |i: usize, j: usize| mask.as_ref().is_none_or(|m| m[[i, j]] == 1.0);
    let mut total = 0.0;
    for i in 0..n {
        let denom = match normalizer {
            WpcNormalizer::Classes => c as f64,
            WpcNormalizer::Active => match (0..c).filter(|&j| on(i, j)).count() {
                0 => continue,
                k => k as f64,
            },
        };
        let scale = 1.0 / (denom * n as f64);
        let mut sample = 0.0;
        for j in 0..c {
            if on(i, j) {
                let (qij, y) = (q[[i, j]], labels[[i, j]]);
                sample += xent(qij, y);
                // The adjustment is a logit shift, so d/dlogit is q - y.
                out.grad_logits[[i, j]] = (qij - y) * scale;
            }
        }
        total += sample / denom;
    }
    out.value = total / n as f64;
    out
}

/// Binary cross-entropy averaged over classes and batch.
pub fn bce_loss(probs: ArrayView2<f64>, labels: ArrayView2<f64>) -> Result<LossOutput> {
    check_same(&probs, &labels, "bce_loss")?;
    check_binary(&labels, "labels")?;
    Ok(masked_xent(probs, labels, None, WpcNormalizer::Classes))
}

/// Partial-class BCE on logit-adjusted probabilities, restricted to entries
/// where `active_mask` is 1. Masked-out entries get an exact zero gradient.
pub fn wpc_loss(
    probs: ArrayView2<f64>,
    labels: ArrayView2<f64>,
    active_mask: ArrayView2<f64>,
    priors: &ClassPriors,
    normalizer: WpcNormalizer,
) -> Result<LossOutput> {
    check_same(&probs, &labels, "wpc_loss labels")?;
    check_same(&probs, &active_mask, "wpc_loss mask")?;
    check_binary(&active_mask, "active mask")?;
    if active_mask.iter().all(|&m| m == 0.0) {
        return Ok(LossOutput::zero(probs.dim()));
    }
    // Only supervised entries need binary labels.
    if Zip::from(&labels)
        .and(&active_mask)
        .fold(false, |bad, &y, &m| bad || (m == 1.0 && y != 0.0 && y != 1.0))
    {
        return Err(FedError::Domain("labels must be 0 or 1".into()));
    }
    let adjusted = adjust_probs(probs, priors)?;
    Ok(masked_xent(
        adjusted.view(),
        labels,
        Some(active_mask),
        normalizer,
    ))
}

/// Mean squared error between student and frozen teacher probabilities over
/// masked entries; the mean runs over the masked count.
pub fn mse_consistency_loss(
    student_probs: ArrayView2<f64>,
    teacher_probs: ArrayView2<f64>,
    uncertain_mask: ArrayView2<f64>,
) -> Result<LossOutput> {
    check_same(&student_probs, &teacher_probs, "mse teacher")?;
    check_same(&student_probs, &uncertain_mask, "mse mask")?;
    check_binary(&uncertain_mask, "uncertain mask")?;
    let count = uncertain_mask.iter().filter(|&&m| m == 1.0).count();
    let mut out = LossOutput::zero(student_probs.dim());
    if count == 0 {
        return Ok(out);
    }
    let inv = 1.0 / count as f64;
    let mut total = 0.0;
    Zip::from(&mut out.grad_logits)
        .and(&student_probs)
        .and(&teacher_probs)
        .and(&uncertain_mask)
        .for_each(|g, &s, &t, &m| {
            if m == 1.0 {
                let d = s - t;
                total += d * d;
                *g = 2.0 * d * s * (1.0 - s) * inv;
            }
        });
    out.value = total * inv;
    Ok(out)
}
