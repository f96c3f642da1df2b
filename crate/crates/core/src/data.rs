//! Synthetic multi-label data, client sharding, partial-label masks and the
//! two-view noise augmentation.
//!
//! Labels come from a Gaussian copula: a correlated normal vector is
//! thresholded per class at the quantile matching its positive rate, so the
//! marginals are exact and the correlation matrix controls co-occurrence.
//! Each class owns a random direction in input space; a sample is the sum of
//! the directions of its positive classes plus isotropic Gaussian noise.

use std::io::{BufRead, Write};
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{FedError, Result};
use crate::ledger::PseudoLabelLedger;
use crate::loss::ClassPriors;
use crate::prototype::AnnotationDist;
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub input_dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub positive_rates: Vec<f64>,
    /// Label correlation matrix (latent Gaussian scale); identity if `None`.
    pub correlation: Option<Vec<Vec<f64>>>,
    /// Norm of each class direction.
    pub signal: f64,
    /// Per-coordinate standard deviation of the input noise.
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Five classes with two rare ("cool") classes at the tail.
    pub fn desk_default(seed: u64) -> Self {
        Self {
            classes: 5,
            input_dim: 32,
            n_train: 5000,
            n_test: 2000,
            positive_rates: vec![0.30, 0.20, 0.10, 0.05, 0.03],
            correlation: Some(uniform_correlation(5, 0.2)),
            signal: 1.0,
            noise: 0.3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.input_dim == 0 {
            return Err(FedError::Config("classes and input_dim must be positive".into()));
        }
        if self.positive_rates.len() != self.classes {
            return Err(FedError::Config(format!(
                "{} positive rates for {} classes",
                self.positive_rates.len(),
                self.classes
            )));
        }
        if let Some(r) = self.positive_rates.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(FedError::Config(format!("positive rate {r} outside (0, 1)")));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite() && self.signal.is_finite()) {
            return Err(FedError::Config("noise must be finite and non-negative".into()));
        }
        if let Some(m) = &self.correlation {
            if m.len() != self.classes || m.iter().any(|r| r.len() != self.classes) {
                return Err(FedError::Config("correlation matrix must be classes x classes".into()));
            }
            for i in 0..self.classes {
                if m[i][i] != 1.0 {
                    return Err(FedError::Config("correlation diagonal must be 1".into()));
                }
                for j in 0..i {
                    if m[i][j] != m[j][i] {
                        return Err(FedError::Config("correlation matrix must be symmetric".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Unit diagonal, `rho` everywhere else.
pub fn uniform_correlation(classes: usize, rho: f64) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|i| (0..classes).map(|j| if i == j { 1.0 } else { rho }).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    /// Ground-truth labels in {0, 1}.
    pub labels: Array2<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice(&self, rows: Range<usize>) -> Dataset {
        Dataset {
            inputs: self.inputs.slice(s![rows.clone(), ..]).to_owned(),
            labels: self.labels.slice(s![rows, ..]).to_owned(),
        }
    }
}

/// Returns `(train, test)`.
pub fn generate_dataset(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let c = spec.classes;
    let corr = spec
        .correlation
        .clone()
        .unwrap_or_else(|| uniform_correlation(c, 0.0));
    let sigma = DMatrix::from_fn(c, c, |i, j| corr[i][j]);
    let chol = sigma.cholesky().ok_or_else(|| {
        FedError::Generation("correlation matrix is not positive definite".into())
    })?;
    let lower = chol.l();
    let std_normal = Normal::standard();
    let cutoffs: Vec<f64> = spec
        .positive_rates
        .iter()
        .map(|&r| std_normal.inverse_cdf(r))
        .collect();

    let mut rng = stream(spec.seed, Domain::Data, 0, 0);
    let directions = Array2::from_shape_fn((c, spec.input_dim), |_| rng.sample::<f64, _>(StandardNormal));
    let directions = {
        let mut d = directions;
        for mut row in d.rows_mut() {
            let norm = row.dot(&row).sqrt();
            row.mapv_inplace(|v| v / norm * spec.signal);
        }
        d
    };

    let mut draw = |n: usize| -> Dataset {
        let mut inputs = Array2::zeros((n, spec.input_dim));
        let mut labels = Array2::zeros((n, c));
        for i in 0..n {
            let g = DVector::from_fn(c, |_, _| rng.sample::<f64, _>(StandardNormal));
            let z = &lower * g;
            for k in 0..c {
                if z[k] < cutoffs[k] {
                    labels[[i, k]] = 1.0;
                }
            }
            let mut x = inputs.row_mut(i);
            for v in x.iter_mut() {
                *v = spec.noise * rng.sample::<f64, _>(StandardNormal);
            }
            for k in 0..c {
                if labels[[i, k]] == 1.0 {
                    x += &directions.row(k);
                }
            }
        }
        Dataset { inputs, labels }
    };
    let train = draw(spec.n_train);
    let test = draw(spec.n_test);
    Ok((train, test))
}

/// Contiguous shards of `n` rows over `clients`; sizes differ by at most one,
/// with the larger shards at the end.
pub fn partition_clients(n: usize, clients: usize) -> Result<Vec<Range<usize>>> {
    if clients == 0 || clients > n {
        return Err(FedError::Config(format!(
            "cannot split {n} samples over {clients} clients"
        )));
    }
    let base = n / clients;
    let extra = n % clients;
    let mut start = 0;
    Ok((0..clients)
        .map(|k| {
            let len = base + usize::from(k >= clients - extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

/// Which classes each client lacks labels for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    /// `missing[k]`: classes client `k` does not annotate, ascending.
    pub missing: Vec<Vec<usize>>,
    pub missing_per_client: usize,
    /// `annotators[c]`: clients that label class `c`, ascending.
    pub annotators: AnnotationDist,
}

impl MaskPlan {
    pub fn from_missing(missing: Vec<Vec<usize>>, classes: usize) -> Result<Self> {
        let m = missing.first().map_or(0, Vec::len);
        let mut annotators = vec![Vec::new(); classes];
        for (k, miss) in missing.iter().enumerate() {
            if miss.len() != m {
                return Err(FedError::Config("clients miss different numbers of classes".into()));
            }
            for c in 0..classes {
                if !miss.contains(&c) {
                    annotators[c].push(k);
                }
            }
        }
        Ok(Self {
            missing,
            missing_per_client: m,
            annotators,
        })
    }

    pub fn active(&self, client: usize) -> Vec<usize> {
        (0..self.annotators.len())
            .filter(|c| !self.missing[client].contains(c))
            .collect()
    }

    pub fn clients(&self) -> usize {
        self.missing.len()
    }

    pub fn is_valid(&self) -> bool {
        let c = self.annotators.len();
        self.missing_per_client >= 1
            && self.missing.iter().all(|m| m.len() == self.missing_per_client && m.len() < c)
            && self.annotators.iter().all(|a| !a.is_empty())
    }
}

const MAX_PLAN_ATTEMPTS: usize = 1_000_000;

/// Every client drops `m` random classes; plans leaving some class without any
/// annotator are rejected and redrawn.
pub fn build_mask_plan(clients: usize, classes: usize, m: usize, seed: u64) -> Result<MaskPlan> {
    if clients == 0 || classes < 2 {
        return Err(FedError::Config("need at least one client and two classes".into()));
    }
    if m == 0 || m >= classes {
        return Err(FedError::Config(format!(
            "missing classes per client must be in [1, {}], got {m}",
            classes - 1
        )));
    }
    if clients * (classes - m) < classes {
        return Err(FedError::Config(format!(
            "{clients} clients labeling {} classes each cannot cover {classes} classes",
            classes - m
        )));
    }
    let mut rng = stream(seed, Domain::MaskPlan, 0, 0);
    let mut all: Vec<usize> = (0..classes).collect();
    for _ in 0..MAX_PLAN_ATTEMPTS {
        let missing: Vec<Vec<usize>> = (0..clients)
            .map(|_| {
                all.shuffle(&mut rng);
                let mut miss = all[..m].to_vec();
                miss.sort_unstable();
                miss
            })
            .collect();
        let plan = MaskPlan::from_missing(missing, classes)?;
        if plan.is_valid() {
            return Ok(plan);
        }
    }
    Err(FedError::Config(format!(
        "no covering mask plan found in {MAX_PLAN_ATTEMPTS} draws"
    )))
}

/// The two label views a client works with.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedLabels {
    /// Missing classes filled with 0, for the baseline that treats them as negative.
    pub missing_as_negative: Array2<f64>,
    /// 1 where the label is known.
    pub active_mask: Array2<f64>,
}

pub fn apply_mask(labels: ArrayView2<f64>, missing: &[usize]) -> ObservedLabels {
    let mut observed = labels.to_owned();
    let mut mask = Array2::ones(labels.dim());
    for &c in missing {
        observed.column_mut(c).fill(0.0);
        mask.column_mut(c).fill(0.0);
    }
    ObservedLabels {
        missing_as_negative: observed,
        active_mask: mask,
    }
}

/// Additive Gaussian noise at a weak and a strong scale.
pub fn augment_two_views<R: Rng + ?Sized>(
    inputs: ArrayView2<f64>,
    weak: f64,
    strong: f64,
    rng: &mut R,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if !(0.0 <= weak && weak <= strong) {
        return Err(FedError::Config(format!(
            "augmentation scales must satisfy 0 <= weak <= strong, got {weak}, {strong}"
        )));
    }
    let mut perturb = |scale: f64| {
        let mut v = inputs.to_owned();
        if scale > 0.0 {
            v.mapv_inplace(|x| x + scale * rng.sample::<f64, _>(StandardNormal));
        }
        v
    };
    let view1 = perturb(weak);
    let view2 = perturb(strong);
    Ok((view1, view2))
}

/// Positive rates over supervised entries: known labels plus permanent
/// pseudo labels from `ledger`.
pub fn compute_class_priors(
    labels: ArrayView2<f64>,
    active_mask: ArrayView2<f64>,
    ledger: Option<&PseudoLabelLedger>,
    la_tau: f64,
) -> ClassPriors {
    let c = labels.ncols();
    let mut counts = vec![(0usize, 0usize); c];
    for (row_y, row_m) in labels.rows().into_iter().zip(active_mask.rows()) {
        for j in 0..c {
            if row_m[j] == 1.0 {
                counts[j].1 += 1;
                counts[j].0 += usize::from(row_y[j] == 1.0);
            }
        }
    }
    if let Some(l) = ledger {
        for (_, class, tag) in l.iter_tags() {
            counts[class].1 += 1;
            counts[class].0 += usize::from(tag.value == 1);
        }
    }
    let priors = ClassPriors::from_counts(&counts, la_tau);
    if !priors.defaulted.is_empty() {
        tracing::debug!(classes = ?priors.defaulted, "no supervised entries, prior set to 0.5");
    }
    priors
}

/// One row of a dataset bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleRow {
    /// `None` for held-out test rows.
    pub client: Option<usize>,
    pub input: Array1<f64>,
    pub truth: Array1<f64>,
    pub observed: Array1<f64>,
}

/// Write rows as CSV: `client,x0..,y0..,o0..` with an empty client for test rows.
pub fn write_bundle<W: Write>(mut w: W, rows: &[BundleRow]) -> std::io::Result<()> {
    let (d, c) = rows
        .first()
        .map_or((0, 0), |r| (r.input.len(), r.truth.len()));
    let mut header = vec!["client".to_string()];
    header.extend((0..d).map(|j| format!("x{j}")));
    header.extend((0..c).map(|j| format!("y{j}")));
    header.extend((0..c).map(|j| format!("o{j}")));
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        let mut fields = vec![r.client.map_or(String::new(), |k| k.to_string())];
        fields.extend(r.input.iter().map(|v| format!("{v:?}")));
        fields.extend(r.truth.iter().map(|v| format!("{}", *v as u8)));
        fields.extend(r.observed.iter().map(|v| format!("{}", *v as u8)));
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn read_bundle<R: BufRead>(r: R) -> Result<Vec<BundleRow>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| FedError::Domain("empty bundle".into()))?
        .map_err(|e| FedError::Domain(e.to_string()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let d = cols.iter().filter(|h| h.starts_with('x')).count();
    let c = cols.iter().filter(|h| h.starts_with('y')).count();
    if cols.first() != Some(&"client") || cols.len() != 1 + d + 2 * c {
        return Err(FedError::Domain(format!("malformed bundle header: {header}")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| FedError::Domain(e.to_string()))?;
        let f: Vec<&str> = line.split(',').collect();
        let bad = |what: &str| FedError::Domain(format!("bundle line {}: {what}", n + 2));
        if f.len() != cols.len() {
            return Err(bad("wrong field count"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let client = if f[0].is_empty() {
            None
        } else {
            Some(f[0].parse().map_err(|_| bad("bad client id"))?)
        };
        let vec = |r: Range<usize>| -> Result<Array1<f64>> {
            f[r].iter().map(|s| num(s)).collect::<Result<Vec<_>>>().map(Array1::from)
        };
        rows.push(BundleRow {
            client,
            input: vec(1..1 + d)?,
            truth: vec(1 + d..1 + d + c)?,
            observed: vec(1 + d + c..1 + d + 2 * c)?,
        });
    }
    Ok(rows)
}
