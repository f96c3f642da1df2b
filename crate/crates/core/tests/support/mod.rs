// Shared by the core integration tests and the CLI acceptance suite.
// Everything here is written independently of the library code it checks:
// plain loops, no reuse of library helpers beyond the public types.
#![allow(dead_code)]

use std::collections::BTreeMap;

use fedmlp::loss::{bce_loss, mse_consistency_loss, wpc_loss, ClassPriors, WpcNormalizer};
use fedmlp::model::{backward, forward, ModelParams};
use fedmlp::prototype::DualPrototype;
use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.random_range(lo..hi))
}

pub fn binary(rng: &mut ChaCha8Rng, shape: (usize, usize), p: f64) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| f64::from(u8::from(rng.random_bool(p))))
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Norm-wise relative error between two gradient vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` over every entry of `x`.
pub fn numeric_grad(x: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.dim());
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let (i, j) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[[i, j]];
        probe[[i, j]] = orig + FD_STEP;
        let up = f(&probe);
        probe[[i, j]] = orig - FD_STEP;
        let down = f(&probe);
        probe[[i, j]] = orig;
        g[[i, j]] = (up - down) / (2.0 * FD_STEP);
    }
    g
}

/// Random priors away from the clamps.
pub fn random_priors(rng: &mut ChaCha8Rng, classes: usize) -> ClassPriors {
    let pi: Vec<f64> = (0..classes).map(|_| rng.random_range(0.02..0.98)).collect();
    ClassPriors::new(pi, 1.0).unwrap()
}

/// One gradient-check instance per loss; each returns the relative error
/// between the analytic logit gradient and central differences, plus whether
/// every masked-out entry had an exactly zero gradient.
pub struct GradCase {
    pub rel_err: f64,
    pub masked_zero: bool,
}

pub fn bce_case(seed: u64) -> GradCase {
    let mut r = rng(seed);
    let (n, c) = (r.random_range(1..6), r.random_range(1..6));
    let logits = uniform(&mut r, (n, c), -4.0, 4.0);
    let y = binary(&mut r, (n, c), 0.4);
    let loss = |l: &Array2<f64>| bce_loss(l.mapv(sigmoid).view(), y.view()).unwrap().value;
    let out = bce_loss(logits.mapv(sigmoid).view(), y.view()).unwrap();
    let num = numeric_grad(&logits, loss);
    GradCase {
        rel_err: rel_err(out.grad_logits.as_slice().unwrap(), num.as_slice().unwrap()),
        masked_zero: true,
    }
}

pub fn wpc_case(seed: u64, normalizer: WpcNormalizer) -> GradCase {
    let mut r = rng(seed);
    let (n, c) = (r.random_range(1..6), r.random_range(2..6));
    let logits = uniform(&mut r, (n, c), -4.0, 4.0);
    let y = binary(&mut r, (n, c), 0.4);
    let mut mask = binary(&mut r, (n, c), 0.6);
    mask[[0, 0]] = 1.0;
    let priors = random_priors(&mut r, c);
    wpc_check(&logits, &y, &mask, &priors, normalizer)
}

/// The C=3, one-active-class instance.
pub fn wpc_single_active_case(seed: u64) -> GradCase {
    let mut r = rng(seed);
    let n = 6;
    let logits = uniform(&mut r, (n, 3), -3.0, 3.0);
    let y = binary(&mut r, (n, 3), 0.5);
    let active = r.random_range(0..3);
    let mut mask = Array2::zeros((n, 3));
    mask.column_mut(active).fill(1.0);
    let priors = random_priors(&mut r, 3);
    wpc_check(&logits, &y, &mask, &priors, WpcNormalizer::Classes)
}

fn wpc_check(
    logits: &Array2<f64>,
    y: &Array2<f64>,
    mask: &Array2<f64>,
    priors: &ClassPriors,
    normalizer: WpcNormalizer,
) -> GradCase {
    let run = |l: &Array2<f64>| {
        wpc_loss(l.mapv(sigmoid).view(), y.view(), mask.view(), priors, normalizer).unwrap()
    };
    let out = run(logits);
    let num = numeric_grad(logits, |l| run(l).value);
    GradCase {
        rel_err: rel_err(out.grad_logits.as_slice().unwrap(), num.as_slice().unwrap()),
        masked_zero: masked_exact_zero(out.grad_logits.view(), mask.view()),
    }
}

pub fn mse_case(seed: u64) -> GradCase {
    let mut r = rng(seed);
    let (n, c) = (r.random_range(1..6), r.random_range(1..6));
    let logits = uniform(&mut r, (n, c), -3.0, 3.0);
    let teacher = uniform(&mut r, (n, c), 0.01, 0.99);
    let mut mask = binary(&mut r, (n, c), 0.5);
    mask[[0, 0]] = 1.0;
    let run = |l: &Array2<f64>| {
        mse_consistency_loss(l.mapv(sigmoid).view(), teacher.view(), mask.view()).unwrap()
    };
    let out = run(&logits);
    let num = numeric_grad(&logits, |l| run(l).value);
    GradCase {
        rel_err: rel_err(out.grad_logits.as_slice().unwrap(), num.as_slice().unwrap()),
        masked_zero: masked_exact_zero(out.grad_logits.view(), mask.view()),
    }
}

fn masked_exact_zero(grad: ArrayView2<f64>, mask: ArrayView2<f64>) -> bool {
    grad.iter().zip(mask.iter()).all(|(&g, &m)| m == 1.0 || g == 0.0)
}

/// Full-model check: WPC plus consistency, differentiated wrt every parameter.
pub fn model_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, d_in, d_f, c) = (4, 3, 5, 3);
    let params = ModelParams::init(d_in, d_f, c, &mut r);
    let x = uniform(&mut r, (n, d_in), -1.5, 1.5);
    let y = binary(&mut r, (n, c), 0.4);
    let mask = binary(&mut r, (n, c), 0.6);
    let teacher = uniform(&mut r, (n, c), 0.05, 0.95);
    let uncertain = mask.mapv(|m| 1.0 - m);
    let priors = random_priors(&mut r, c);
    let total = |p: &ModelParams| {
        let probs = forward(p, x.view()).unwrap().probs;
        let a = wpc_loss(probs.view(), y.view(), mask.view(), &priors, WpcNormalizer::Classes).unwrap();
        let b = mse_consistency_loss(probs.view(), teacher.view(), uncertain.view()).unwrap();
        (a.value + b.value, a.grad_logits + &b.grad_logits)
    };
    let fwd = forward(&params, x.view()).unwrap();
    let (_, g_logits) = total(&params);
    let analytic: Vec<f64> = backward(&params, x.view(), &fwd, g_logits.view()).unwrap().iter().collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut probe = params.clone();
    for k in 0..analytic.len() {
        let orig = probe.iter().nth(k).unwrap();
        *probe.iter_mut().nth(k).unwrap() = orig + FD_STEP;
        let up = total(&probe).0;
        *probe.iter_mut().nth(k).unwrap() = orig - FD_STEP;
        let down = total(&probe).0;
        *probe.iter_mut().nth(k).unwrap() = orig;
        numeric.push((up - down) / (2.0 * FD_STEP));
    }
    rel_err(&analytic, &numeric)
}

// ---- brute-force oracles ------------------------------------------------

/// Per-class means of the rows labeled 0 and 1, by explicit accumulation.
pub fn prototype_oracle(features: &Array2<f64>, labels: &Array2<f64>, class: usize) -> [Option<Vec<f64>>; 2] {
    let d = features.ncols();
    let mut out = [None, None];
    for (side, want) in [0.0, 1.0].into_iter().enumerate() {
        let mut sum = vec![0.0; d];
        let mut n = 0usize;
        for i in 0..features.nrows() {
            if labels[[i, class]] == want {
                for j in 0..d {
                    sum[j] += features[[i, j]];
                }
                n += 1;
            }
        }
        if n > 0 {
            out[side] = Some(sum.into_iter().map(|s| s / n as f64).collect());
        }
    }
    out
}

/// Unweighted mean over annotating clients of each available side.
pub fn global_prototype_oracle(
    locals: &BTreeMap<(usize, usize), DualPrototype>,
    annotators: &[Vec<usize>],
    class: usize,
) -> [Option<Vec<f64>>; 2] {
    let mut out = [None, None];
    for side in 0..2 {
        let mut vecs: Vec<&Array1<f64>> = Vec::new();
        let mut clients = annotators[class].clone();
        clients.sort_unstable();
        for k in clients {
            if let Some(p) = locals.get(&(k, class)) {
                let v = if side == 0 { &p.p0 } else { &p.p1 };
                if let Some(v) = v {
                    vecs.push(v);
                }
            }
        }
        if !vecs.is_empty() {
            let d = vecs[0].len();
            let mut sum = vec![0.0; d];
            for v in &vecs {
                for j in 0..d {
                    sum[j] += v[j];
                }
            }
            out[side] = Some(sum.into_iter().map(|s| s / vecs.len() as f64).collect());
        }
    }
    out
}

pub fn difficulty_oracle(
    locals: &BTreeMap<(usize, usize), f64>,
    sizes: &[usize],
    annotators: &[Vec<usize>],
) -> Vec<f64> {
    annotators
        .iter()
        .enumerate()
        .map(|(c, ks)| {
            let total: usize = ks.iter().map(|&k| sizes[k]).sum();
            let mut sorted = ks.clone();
            sorted.sort_unstable();
            sorted
                .iter()
                .map(|&k| sizes[k] as f64 / total as f64 * locals[&(k, c)])
                .sum()
        })
        .collect()
}

/// Weighted mean of flat parameter vectors.
pub fn fedavg_oracle(models: &[Vec<f64>], sizes: &[usize]) -> Vec<f64> {
    let total: usize = sizes.iter().sum();
    let mut out = vec![0.0; models[0].len()];
    for (m, &n) in models.iter().zip(sizes) {
        for (o, v) in out.iter_mut().zip(m) {
            *o += n as f64 / total as f64 * v;
        }
    }
    out
}

/// Selection by counting, for each candidate, how many same-side candidates
/// outrank it.
pub fn selection_oracle(candidates: &[(usize, f64)], tau0: f64, tau1: f64) -> (Vec<usize>, Vec<usize>) {
    let side = |want_neg: bool, tau: f64| {
        let members: Vec<(usize, f64)> = candidates
            .iter()
            .copied()
            .filter(|&(_, z)| (z >= 0.0) == want_neg)
            .collect();
        let quota = (tau * members.len() as f64).floor() as usize;
        let mut picked: Vec<usize> = members
            .iter()
            .filter(|&&(i, z)| {
                let better = members
                    .iter()
                    .filter(|&&(j, w)| {
                        let stronger = if want_neg { w > z } else { w < z };
                        stronger || (w == z && j < i)
                    })
                    .count();
                better < quota
            })
            .map(|&(i, _)| i)
            .collect();
        picked.sort_unstable();
        picked
    };
    (side(true, tau0), side(false, tau1))
}

/// Pairwise AUC: share of (positive, negative) pairs ordered correctly, ties 1/2.
pub fn auc_oracle(scores: &[f64], truth: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if truth[i] == 1.0 && truth[j] == 0.0 {
                pairs += 1.0;
                if si > sj {
                    num += 1.0;
                } else if si == sj {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

/// AP with ranks from pairwise comparison: descending score, ties by index.
pub fn ap_oracle(scores: &[f64], truth: &[f64]) -> f64 {
    let ahead = |i: usize, j: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
    let n = scores.len();
    let mut sum = 0.0;
    let mut positives = 0.0;
    for i in 0..n {
        if truth[i] != 1.0 {
            continue;
        }
        positives += 1.0;
        let rank = 1 + (0..n).filter(|&j| ahead(i, j)).count();
        let hits = 1 + (0..n).filter(|&j| truth[j] == 1.0 && ahead(i, j)).count();
        sum += hits as f64 / rank as f64;
    }
    sum / positives
}

/// Logit adjustment from its defining ratio.
pub fn adjust_oracle(p: f64, pi1: f64) -> f64 {
    p * pi1 / (p * pi1 + (1.0 - p) * (1.0 - pi1))
}
