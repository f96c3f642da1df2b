//! Class learning-degree estimates and the self-adaptive selection ratios
//! derived from them.

use std::collections::BTreeMap;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::prototype::AnnotationDist;

/// Fraction of confidently predicted samples per active class of one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyReport {
    /// `class -> d` for each active class.
    pub local: BTreeMap<usize, f64>,
    /// `class -> number of samples outside the [low, high] band`.
    pub confident: BTreeMap<usize, usize>,
    pub samples: usize,
}

/// Per class, the share of samples whose probability is below `low` or above
/// `high`. Higher means better learned.
pub fn compute_local_difficulty(
    probs: ArrayView2<f64>,
    active_classes: &[usize],
    low: f64,
    high: f64,
) -> Result<DifficultyReport> {
    if !(0.0 <= low && low < high && high <= 1.0) {
        return Err(FedError::Config(format!(
            "difficulty band must satisfy 0 <= L < R <= 1, got [{low}, {high}]"
        )));
    }
    let n = probs.nrows();
    if n == 0 {
        return Err(FedError::Domain("difficulty of an empty dataset".into()));
    }
    let mut local = BTreeMap::new();
    let mut confident = BTreeMap::new();
    for &c in active_classes {
        if c >= probs.ncols() {
            return Err(FedError::Dimension(format!("class {c} out of range")));
        }
        let k = probs
            .column(c)
            .iter()
            .filter(|&&p| p < low || p > high)
            .count();
        local.insert(c, k as f64 / n as f64);
        confident.insert(c, k);
    }
    Ok(DifficultyReport {
        local,
        confident,
        samples: n,
    })
}

/// Dataset-size weighted mean of local degrees over each class's annotators.
pub fn aggregate_global_difficulty(
    locals: &BTreeMap<(usize, usize), f64>,
    dataset_sizes: &[usize],
    annotators: &AnnotationDist,
) -> Result<Vec<f64>> {
    annotators
        .iter()
        .enumerate()
        .map(|(c, clients)| {
            if clients.is_empty() {
                return Err(FedError::Protocol(format!("class {c} has no annotating client")));
            }
            let mut sorted = clients.clone();
            sorted.sort_unstable();
            let mut total = 0usize;
            for &k in &sorted {
                total += *dataset_sizes
                    .get(k)
                    .ok_or_else(|| FedError::Protocol(format!("no size for client {k}")))?;
            }
            if total == 0 {
                return Err(FedError::Domain(format!("class {c}: annotators hold no data")));
            }
            let mut d = 0.0;
            for &k in &sorted {
                let local = locals.get(&(k, c)).ok_or_else(|| {
                    FedError::Protocol(format!("client {k} did not report difficulty for class {c}"))
                })?;
                d += dataset_sizes[k] as f64 / total as f64 * local;
            }
            Ok(d)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRatios {
    pub tau0: Vec<f64>,
    pub tau1: Vec<f64>,
}

impl SelectionRatios {
    pub fn constant(classes: usize, t0: f64, t1: f64) -> Self {
        Self {
            tau0: vec![t0; classes],
            tau1: vec![t1; classes],
        }
    }

    /// Raise every ratio to at least `floor`.
    pub fn with_floor(mut self, floor: f64) -> Self {
        if floor > 0.0 {
            self.tau0.iter_mut().for_each(|t| *t = t.max(floor));
            self.tau1.iter_mut().for_each(|t| *t = t.max(floor));
        }
        self
    }
}

/// `tau0[c] = d[c] * t0`, `tau1[c] = d[c] * t1`.
pub fn adaptive_thresholds(d_global: &[f64], t0: f64, t1: f64) -> SelectionRatios {
    SelectionRatios {
        tau0: d_global.iter().map(|d| d * t0).collect(),
        tau1: d_global.iter().map(|d| d * t1).collect(),
    }
}
