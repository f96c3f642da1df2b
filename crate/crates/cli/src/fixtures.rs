//! Language-neutral fixtures: small inputs with the outputs this
//! implementation computes for them, one JSON file per operation.

use std::collections::BTreeMap;
use std::path::Path;

use fedmlp::data::{build_mask_plan, partition_clients};
use fedmlp::difficulty::{adaptive_thresholds, aggregate_global_difficulty, compute_local_difficulty};
use fedmlp::loss::{adjust_probs, bce_loss, mse_consistency_loss, wpc_loss, ClassPriors, WpcNormalizer};
use fedmlp::metrics::{auc, balanced_accuracy, mean_average_precision};
use fedmlp::model::{forward, ModelParams};
use fedmlp::protocol::fedavg_aggregate;
use fedmlp::prototype::{aggregate_global_prototypes, compute_local_prototypes, confidence_scores, select_pseudo_labels, DualPrototype};
use fedmlp::rng::{stream, Domain};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::{CliError, Result};
use crate::output::write_atomic;

fn mat(a: &Array2<f64>) -> Value {
    json!(a.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>())
}

fn rng(id: u64) -> ChaCha8Rng {
    stream(0, Domain::Fixture, id, 0)
}

fn uniform(r: &mut ChaCha8Rng, shape: (usize, usize), lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| r.random_range(lo..hi))
}

fn binary(r: &mut ChaCha8Rng, shape: (usize, usize), p: f64) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| f64::from(u8::from(r.random_bool(p))))
}

fn proto_json(p: &DualPrototype) -> Value {
    json!({
        "p0": p.p0.as_ref().map(|v| v.to_vec()),
        "p1": p.p1.as_ref().map(|v| v.to_vec()),
        "support": [p.support.0, p.support.1],
    })
}

fn fixture(op: &str, note: &str, inputs: Value, expected: Value) -> Value {
    json!({ "operation": op, "note": note, "inputs": inputs, "expected": expected })
}

fn logit_adjust() -> Result<Value> {
    let ps = [0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99];
    let pis = [0.01, 0.1, 0.3, 0.5, 0.7, 0.9];
    let probs = Array2::from_shape_fn((ps.len(), pis.len()), |(i, _)| ps[i]);
    let priors = ClassPriors::new(pis.to_vec(), 1.0)?;
    let q = adjust_probs(probs.view(), &priors)?;
    Ok(fixture(
        "adjust_probs",
        "q = p*pi1 / (p*pi1 + (1-p)*(1-pi1)); column j uses pi1[j]",
        json!({ "probs": mat(&probs), "pi1": pis }),
        json!({ "adjusted": mat(&q) }),
    ))
}

fn bce() -> Result<Value> {
    let p = ndarray::array![[0.8, 0.3], [0.6, 0.9]];
    let y = ndarray::array![[1.0, 0.0], [0.0, 1.0]];
    let out = bce_loss(p.view(), y.view())?;
    Ok(fixture(
        "bce_loss",
        "mean over batch and classes; gradient is wrt logits",
        json!({ "probs": mat(&p), "labels": mat(&y) }),
        json!({ "value": out.value, "grad_logits": mat(&out.grad_logits) }),
    ))
}

fn wpc() -> Result<Value> {
    let mut r = rng(11);
    let p = uniform(&mut r, (6, 3), 0.05, 0.95);
    let y = binary(&mut r, (6, 3), 0.4);
    let mut mask = binary(&mut r, (6, 3), 0.5);
    mask.column_mut(0).fill(1.0);
    let pi1 = vec![0.3, 0.1, 0.05];
    let priors = ClassPriors::new(pi1.clone(), 1.0)?;
    let out = wpc_loss(p.view(), y.view(), mask.view(), &priors, WpcNormalizer::Classes)?;
    Ok(fixture(
        "wpc_loss",
        "cross-entropy of adjusted probabilities over mask==1 entries; per-sample sums divided by the class count, then batch mean",
        json!({ "probs": mat(&p), "labels": mat(&y), "mask": mat(&mask), "pi1": pi1 }),
        json!({ "value": out.value, "grad_logits": mat(&out.grad_logits) }),
    ))
}

fn mse() -> Result<Value> {
    let mut r = rng(12);
    let s = uniform(&mut r, (4, 3), 0.05, 0.95);
    let t = uniform(&mut r, (4, 3), 0.05, 0.95);
    let m = binary(&mut r, (4, 3), 0.5);
    let out = mse_consistency_loss(s.view(), t.view(), m.view())?;
    let single = mse_consistency_loss(
        ndarray::array![[0.9]].view(),
        ndarray::array![[0.4]].view(),
        ndarray::array![[1.0]].view(),
    )?;
    Ok(fixture(
        "mse_consistency_loss",
        "mean of (s - t)^2 over mask==1 entries; gradient wrt student logits",
        json!({ "student": mat(&s), "teacher": mat(&t), "mask": mat(&m) }),
        json!({ "value": out.value, "grad_logits": mat(&out.grad_logits), "single_entry_0.9_vs_0.4": single.value }),
    ))
}

fn forward_pass() -> Result<Value> {
    let mut r = rng(7);
    let params = ModelParams::init(4, 5, 3, &mut r);
    let x = uniform(&mut r, (3, 4), -1.0, 1.0);
    let out = forward(&params, x.view())?;
    Ok(fixture(
        "forward",
        "features = relu(x w1 + b1); probs = sigmoid(features w2 + b2)",
        json!({
            "w1": mat(&params.w1), "b1": params.b1.to_vec(),
            "w2": mat(&params.w2), "b2": params.b2.to_vec(), "inputs": mat(&x)
        }),
        json!({ "features": mat(&out.features), "probs": mat(&out.probs) }),
    ))
}

fn local_prototypes() -> Result<Value> {
    let mut r = rng(3);
    let f = uniform(&mut r, (50, 4), 0.0, 2.0);
    let y = binary(&mut r, (50, 3), 0.3);
    let protos = compute_local_prototypes(f.view(), y.view(), &[0, 1, 2])?;
    let expected: BTreeMap<String, Value> = protos.iter().map(|(c, p)| (c.to_string(), proto_json(p))).collect();
    Ok(fixture(
        "compute_local_prototypes",
        "p0/p1: means of feature rows with label 0/1 for each class",
        json!({ "features": mat(&f), "labels": mat(&y), "active": [0, 1, 2] }),
        json!(expected),
    ))
}

fn global_prototypes() -> Result<Value> {
    let mut r = rng(5);
    let annotators = vec![vec![0, 2], vec![1], vec![0, 1, 2], vec![2]];
    let mut locals = BTreeMap::new();
    let mut listed = Vec::new();
    for (c, ks) in annotators.iter().enumerate() {
        for &k in ks {
            let side = |r: &mut ChaCha8Rng| r.random_bool(0.85).then(|| Array1::from_shape_fn(3, |_| r.random_range(-1.0..1.0)));
            let p0 = side(&mut r);
            let p1 = side(&mut r);
            let p = DualPrototype {
                class_id: c,
                support: (usize::from(p0.is_some()), usize::from(p1.is_some())),
                p0,
                p1,
            };
            listed.push(json!({ "client": k, "class": c, "prototype": proto_json(&p) }));
            locals.insert((k, c), p);
        }
    }
    let global = aggregate_global_prototypes(&locals, &annotators)?;
    let expected: BTreeMap<String, Value> = global.iter().map(|(c, p)| (c.to_string(), proto_json(p))).collect();
    Ok(fixture(
        "aggregate_global_prototypes",
        "unweighted mean over annotating clients of each side that exists; support counts contributing clients",
        json!({ "locals": listed, "annotators": annotators }),
        json!(expected),
    ))
}

fn confidence() -> Result<Value> {
    let p0 = Array1::from(vec![1.0, 0.0]);
    let p1 = Array1::from(vec![0.0, 1.0]);
    let f = ndarray::array![[1.0, 0.0], [0.0, 2.0], [1.0, 1.0], [3.0, 1.0]];
    let global = BTreeMap::from([(
        0,
        DualPrototype {
            class_id: 0,
            p0: Some(p0.clone()),
            p1: Some(p1.clone()),
            support: (1, 1),
        },
    )]);
    let z = confidence_scores(f.view(), &global, &[0])?;
    Ok(fixture(
        "confidence_scores",
        "z = cos(p0, f) - cos(p1, f)",
        json!({ "p0": p0.to_vec(), "p1": p1.to_vec(), "features": mat(&f) }),
        json!({ "z": z[&0] }),
    ))
}

fn selection() -> Result<Value> {
    let mut cases = Vec::new();
    let fixed: Vec<(usize, f64)> = vec![(0, 0.9), (1, 0.5), (2, -0.3), (3, -0.7)];
    let mut r = rng(8);
    let random: Vec<(usize, f64)> = (0..40).map(|i| (i, (r.random_range(-10..=10) as f64) / 10.0)).collect();
    for (cands, t0, t1) in [(fixed.clone(), 0.5, 0.5), (fixed, 1.0, 1.0), (random.clone(), 0.3, 0.2), (random, 0.01, 0.01)] {
        let s = select_pseudo_labels(&cands, t0, t1, 0)?;
        cases.push(json!({
            "inputs": { "candidates": cands, "tau0": t0, "tau1": t1 },
            "expected": { "tagged0": s.tagged0, "tagged1": s.tagged1 },
        }));
    }
    Ok(json!({
        "operation": "select_pseudo_labels",
        "note": "z >= 0: top floor(tau0 * count) by z tagged 0; z < 0: top floor(tau1 * count) by -z tagged 1; ties to lower index",
        "cases": cases,
    }))
}

fn local_difficulty() -> Result<Value> {
    let probs = ndarray::array![[0.1, 0.5], [0.5, 0.5], [0.95, 0.9], [0.4, 0.5]];
    let d = compute_local_difficulty(probs.view(), &[0, 1], 0.3, 0.7)?;
    Ok(fixture(
        "compute_local_difficulty",
        "share of samples with p < L or p > R",
        json!({ "probs": mat(&probs), "active": [0, 1], "low": 0.3, "high": 0.7 }),
        json!({ "d": d.local.values().collect::<Vec<_>>() }),
    ))
}

fn global_difficulty() -> Result<Value> {
    let mut r = rng(9);
    let sizes = vec![100, 300, 57];
    let annotators = vec![vec![0, 1], vec![2], vec![0, 1, 2]];
    let mut locals = BTreeMap::new();
    let mut listed = Vec::new();
    for (c, ks) in annotators.iter().enumerate() {
        for &k in ks {
            let d = if (k, c) == (0, 0) { 0.2 } else if (k, c) == (1, 0) { 0.6 } else { r.random_range(0.0..1.0) };
            locals.insert((k, c), d);
            listed.push(json!({ "client": k, "class": c, "d": d }));
        }
    }
    let g = aggregate_global_difficulty(&locals, &sizes, &annotators)?;
    Ok(fixture(
        "aggregate_global_difficulty",
        "dataset-size weighted mean over annotating clients",
        json!({ "locals": listed, "sizes": sizes, "annotators": annotators }),
        json!({ "d_global": g }),
    ))
}

fn thresholds() -> Result<Value> {
    let d = vec![0.0, 1.0, 0.5, 0.25];
    let t = adaptive_thresholds(&d, 0.005, 0.01);
    Ok(fixture(
        "adaptive_thresholds",
        "tau0 = d * t0, tau1 = d * t1",
        json!({ "d_global": d, "t0": 0.005, "t1": 0.01 }),
        json!({ "tau0": t.tau0, "tau1": t.tau1 }),
    ))
}

fn fedavg() -> Result<Value> {
    let mut r = rng(13);
    let models: Vec<ModelParams> = (0..3).map(|_| ModelParams::init(2, 2, 1, &mut r)).collect();
    let sizes = vec![10, 30, 5];
    let refs: Vec<&ModelParams> = models.iter().collect();
    let g = fedavg_aggregate(&refs, &sizes)?;
    let flat = |m: &ModelParams| m.iter().collect::<Vec<f64>>();
    Ok(fixture(
        "fedavg_aggregate",
        "parameters flattened in order w1 (row-major), b1, w2, b2; sample-count weighted mean",
        json!({ "models": models.iter().map(flat).collect::<Vec<_>>(), "sizes": sizes }),
        json!({ "aggregate": flat(&g) }),
    ))
}

fn bacc() -> Result<Value> {
    let probs = ndarray::array![[0.9], [0.6], [0.4], [0.1]];
    let truth = ndarray::array![[1.0], [0.0], [1.0], [0.0]];
    let b = balanced_accuracy(probs.view(), truth.view(), 0.5)?;
    let rates = b.per_class[0].expect("two-sided");
    Ok(fixture(
        "balanced_accuracy",
        "predict positive when p >= threshold; macro mean of (sensitivity + specificity) / 2",
        json!({ "probs": mat(&probs), "truth": mat(&truth), "threshold": 0.5 }),
        json!({ "bacc": b.bacc, "sensitivity": rates.sensitivity, "specificity": rates.specificity }),
    ))
}

fn auc_fixture() -> Result<Value> {
    let mut r = rng(17);
    let s = Array2::from_shape_fn((60, 2), |_| (r.random_range(0..20) as f64) / 20.0);
    let mut y = binary(&mut r, (60, 2), 0.3);
    y[[0, 0]] = 1.0;
    y[[1, 0]] = 0.0;
    y[[0, 1]] = 1.0;
    y[[1, 1]] = 0.0;
    let tie = auc(ndarray::array![[0.8], [0.8], [0.3]].view(), ndarray::array![[1.0], [0.0], [0.0]].view())?;
    let a = auc(s.view(), y.view())?;
    Ok(fixture(
        "auc",
        "Mann-Whitney: share of positive/negative pairs ranked correctly, ties count 1/2",
        json!({ "scores": mat(&s), "truth": mat(&y), "tie_case": { "scores": [0.8, 0.8, 0.3], "truth": [1, 0, 0] } }),
        json!({ "per_class": a.per_class, "mean": a.mean, "tie_case": tie.mean }),
    ))
}

fn ap_fixture() -> Result<Value> {
    let mut r = rng(18);
    let s = Array2::from_shape_fn((60, 2), |_| (r.random_range(0..20) as f64) / 20.0);
    let mut y = binary(&mut r, (60, 2), 0.3);
    y[[0, 0]] = 1.0;
    y[[0, 1]] = 1.0;
    y[[1, 1]] = 0.0;
    y[[1, 0]] = 0.0;
    let m = mean_average_precision(s.view(), y.view())?;
    Ok(fixture(
        "average_precision",
        "rank by descending score, ties by ascending index; mean of precision at each positive",
        json!({ "scores": mat(&s), "truth": mat(&y) }),
        json!({ "per_class": m.per_class, "mean": m.mean }),
    ))
}

fn mask_plans() -> Result<Value> {
    let mut cases = Vec::new();
    for (k, c, m, seed) in [(5, 5, 4, 21), (5, 5, 2, 21), (4, 6, 3, 5)] {
        let plan = build_mask_plan(k, c, m, seed)?;
        cases.push(json!({
            "inputs": { "clients": k, "classes": c, "missing_per_client": m, "seed": seed },
            "expected": { "missing": plan.missing, "annotators": plan.annotators },
        }));
    }
    Ok(json!({
        "operation": "build_mask_plan",
        "note": "draws depend on this implementation's random streams; the invariants (equal m, full coverage) are portable",
        "cases": cases,
    }))
}

fn partitions() -> Result<Value> {
    let mut cases = Vec::new();
    for (n, k) in [(10, 5), (11, 5), (7, 1), (23, 4)] {
        let shards: Vec<[usize; 2]> = partition_clients(n, k)?.into_iter().map(|r| [r.start, r.end]).collect();
        cases.push(json!({ "inputs": { "n": n, "clients": k }, "expected": { "ranges": shards } }));
    }
    Ok(json!({
        "operation": "partition_clients",
        "note": "contiguous half-open ranges; the remainder goes to the last shards",
        "cases": cases,
    }))
}

/// Every fixture as `(file name, document)`.
pub fn build_fixtures() -> Result<Vec<(String, Value)>> {
    type Builder = fn() -> Result<Value>;
    let builders: [(&str, Builder); 18] = [
        ("adjust_probs", logit_adjust),
        ("bce_loss", bce),
        ("wpc_loss", wpc),
        ("mse_consistency_loss", mse),
        ("forward", forward_pass),
        ("local_prototypes", local_prototypes),
        ("global_prototypes", global_prototypes),
        ("confidence_scores", confidence),
        ("pseudo_label_selection", selection),
        ("local_difficulty", local_difficulty),
        ("global_difficulty", global_difficulty),
        ("adaptive_thresholds", thresholds),
        ("fedavg_aggregate", fedavg),
        ("balanced_accuracy", bacc),
        ("auc", auc_fixture),
        ("average_precision", ap_fixture),
        ("mask_plan", mask_plans),
        ("partition", partitions),
    ];
    builders
        .into_iter()
        .map(|(name, f)| Ok((format!("{name}.json"), f()?)))
        .collect()
}

/// `fixtures`: write every fixture under `dir`.
pub fn cmd_fixtures(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    for (name, doc) in build_fixtures()? {
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Config(e.to_string()))?;
        text.push('\n');
        let path = dir.join(name);
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
