//! Dual class prototypes and prototype-based missing-label detection.
//!
//! Each class carries two centroids in feature space: one over samples labeled
//! negative and one over samples labeled positive. A sample's confidence for a
//! class it has no label for is the cosine similarity to the negative centroid
//! minus that to the positive centroid; negative scores lean positive.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};

/// Clients labeling each class: `annotators[c]` lists client ids for class `c`.
pub type AnnotationDist = Vec<Vec<usize>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPrototype {
    pub class_id: usize,
    /// Negative centroid; `None` when no negative sample supports it.
    pub p0: Option<Array1<f64>>,
    /// Positive centroid; `None` when no positive sample supports it.
    pub p1: Option<Array1<f64>>,
    /// `(n0, n1)`: samples (or contributing clients, after aggregation) behind each side.
    pub support: (usize, usize),
}

impl DualPrototype {
    pub fn is_complete(&self) -> bool {
        self.p0.is_some() && self.p1.is_some()
    }
}

/// Per-class centroids of `features` over negative and positive samples of each
/// class in `active_classes`.
pub fn compute_local_prototypes(
    features: ArrayView2<f64>,
    labels: ArrayView2<f64>,
    active_classes: &[usize],
) -> Result<BTreeMap<usize, DualPrototype>> {
    if features.nrows() != labels.nrows() {
        return Err(FedError::Dimension(format!(
            "{} feature rows vs {} label rows",
            features.nrows(),
            labels.nrows()
        )));
    }
    let d = features.ncols();
    let mut out = BTreeMap::new();
    for &c in active_classes {
        if c >= labels.ncols() {
            return Err(FedError::Dimension(format!("class {c} out of range")));
        }
        let mut sums = [Array1::<f64>::zeros(d), Array1::<f64>::zeros(d)];
        let mut counts = [0usize; 2];
        for (row, &y) in features.rows().into_iter().zip(labels.column(c)) {
            let side = usize::from(y == 1.0);
            sums[side] += &row;
            counts[side] += 1;
        }
        let [s0, s1] = sums;
        let mean = |s: Array1<f64>, n: usize| (n > 0).then(|| s / n as f64);
        out.insert(
            c,
            DualPrototype {
                class_id: c,
                p0: mean(s0, counts[0]),
                p1: mean(s1, counts[1]),
                support: (counts[0], counts[1]),
            },
        );
    }
    Ok(out)
}

/// Server-side mean of local prototypes over the clients that label each
/// class. Sides a client could not estimate are skipped, reducing the divisor.
pub fn aggregate_global_prototypes(
    locals: &BTreeMap<(usize, usize), DualPrototype>,
    annotators: &AnnotationDist,
) -> Result<BTreeMap<usize, DualPrototype>> {
    let mut out = BTreeMap::new();
    for (c, clients) in annotators.iter().enumerate() {
        if clients.is_empty() {
            return Err(FedError::Protocol(format!("class {c} has no annotating client")));
        }
        let mut acc: [Option<Array1<f64>>; 2] = [None, None];
        let mut n = [0usize; 2];
        let mut sorted = clients.clone();
        sorted.sort_unstable();
        for k in sorted {
            let Some(local) = locals.get(&(k, c)) else {
                continue;
            };
            for (side, proto) in [&local.p0, &local.p1].into_iter().enumerate() {
                if let Some(p) = proto {
                    match &mut acc[side] {
                        Some(sum) => *sum += p,
                        slot @ None => *slot = Some(p.clone()),
                    }
                    n[side] += 1;
                }
            }
        }
        let [a0, a1] = acc;
        out.insert(
            c,
            DualPrototype {
                class_id: c,
                p0: a0.map(|s| s / n[0] as f64),
                p1: a1.map(|s| s / n[1] as f64),
                support: (n[0], n[1]),
            },
        );
    }
    Ok(out)
}

/// Cosine similarity, or `None` if either vector has zero norm.
pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Option<f64> {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return None;
    }
    Some((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Confidence `cos(P0, F) - cos(P1, F)` for each sample and each class in
/// `negative_classes` whose global prototype has both sides. Entries whose
/// cosine is undefined are `None`. Classes without a complete prototype are
/// left out of the result.
pub fn confidence_scores(
    features: ArrayView2<f64>,
    global: &BTreeMap<usize, DualPrototype>,
    negative_classes: &[usize],
) -> Result<BTreeMap<usize, Vec<Option<f64>>>> {
    let mut out = BTreeMap::new();
    for &c in negative_classes {
        let Some(DualPrototype {
            p0: Some(p0),
            p1: Some(p1),
            ..
        }) = global.get(&c)
        else {
            continue;
        };
        if p0.len() != features.ncols() || p1.len() != features.ncols() {
            return Err(FedError::Dimension(format!(
                "prototype width {} vs feature width {}",
                p0.len(),
                features.ncols()
            )));
        }
        let z = features
            .rows()
            .into_iter()
            .map(|f| Some(cosine(p0.view(), f)? - cosine(p1.view(), f)?))
            .collect();
        out.insert(c, z);
    }
    Ok(out)
}

/// Samples chosen for permanent pseudo labels in one round for one class.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Selection {
    /// Sample indices tagged negative, ascending.
    pub tagged0: Vec<usize>,
    /// Sample indices tagged positive, ascending.
    pub tagged1: Vec<usize>,
}

/// Top-fraction selection over residual `(sample, z)` candidates.
///
/// Among candidates with `z >= 0` the `floor(tau0 * count)` largest get tag 0;
/// among those with `z < 0` the `floor(tau1 * count)` most negative get tag 1.
/// Ties go to the lower sample index. `min_count` raises each side's quota to
/// at least that many (capped by the side's size) whenever its ratio is positive.
pub fn select_pseudo_labels(
    candidates: &[(usize, f64)],
    tau0: f64,
    tau1: f64,
    min_count: usize,
) -> Result<Selection> {
    if !(tau0 >= 0.0 && tau1 >= 0.0) {
        return Err(FedError::Config(format!(
            "selection ratios must be non-negative, got {tau0} and {tau1}"
        )));
    }
    let mut neg: Vec<(usize, f64)> = candidates.iter().copied().filter(|c| c.1 >= 0.0).collect();
    let mut pos: Vec<(usize, f64)> = candidates.iter().copied().filter(|c| c.1 < 0.0).collect();
    let by_score = |a: &(usize, f64), b: &(usize, f64), desc: bool| {
        let ord = if desc {
            b.1.partial_cmp(&a.1)
        } else {
            a.1.partial_cmp(&b.1)
        };
        ord.unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
    };
    neg.sort_by(|a, b| by_score(a, b, true));
    pos.sort_by(|a, b| by_score(a, b, false));
    let quota = |tau: f64, n: usize| {
        let k = ((tau * n as f64).floor() as usize).min(n);
        if tau > 0.0 {
            k.max(min_count.min(n))
        } else {
            k
        }
    };
    let take = |v: &[(usize, f64)], k: usize| {
        let mut ids: Vec<usize> = v[..k].iter().map(|c| c.0).collect();
        ids.sort_unstable();
        ids
    };
    Ok(Selection {
        tagged0: take(&neg, quota(tau0, neg.len())),
        tagged1: take(&pos, quota(tau1, pos.len())),
    })
}
