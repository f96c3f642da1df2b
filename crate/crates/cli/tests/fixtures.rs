#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::BTreeMap;
use std::path::Path;

use fedmlp::prototype::DualPrototype;
use fedmlp_cli::fixtures::cmd_fixtures;
use ndarray::{Array1, Array2};
use serde_json::Value;
use support::*;

const TOL: f64 = 1e-12;

fn load(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

fn f(v: &Value) -> f64 {
    v.as_f64().expect("number")
}

fn vecf(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(f).collect()
}

fn mat(v: &Value) -> Array2<f64> {
    let rows: Vec<Vec<f64>> = v.as_array().unwrap().iter().map(vecf).collect();
    let (n, c) = (rows.len(), rows.first().map_or(0, Vec::len));
    Array2::from_shape_vec((n, c), rows.concat()).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

fn assert_mat(got: &Value, want: &Array2<f64>, what: &str) {
    let g = mat(got);
    assert_eq!(g.dim(), want.dim(), "{what}");
    for (a, b) in g.iter().zip(want.iter()) {
        assert!(close(*a, *b), "{what}: {a} vs {b}");
    }
}

fn xent(q: f64, y: f64) -> f64 {
    -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
}

#[test]
fn fixtures_are_stable_and_complete() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let files = cmd_fixtures(a.path()).unwrap();
    cmd_fixtures(b.path()).unwrap();
    assert!(files.len() >= 12);
    for p in &files {
        let name = p.file_name().unwrap();
        assert_eq!(std::fs::read(p).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name:?}");
        let doc = load(a.path(), name.to_str().unwrap());
        assert!(doc.get("expected").is_some() || doc.get("cases").is_some(), "{name:?} has no expected values");
    }
}

#[test]
fn fixture_values_match_oracles() {
    let dir = tempfile::tempdir().unwrap();
    cmd_fixtures(dir.path()).unwrap();
    let d = dir.path();

    let doc = load(d, "adjust_probs.json");
    let p = mat(&doc["inputs"]["probs"]);
    let pi = vecf(&doc["inputs"]["pi1"]);
    let want = Array2::from_shape_fn(p.dim(), |(i, j)| adjust_oracle(p[[i, j]], pi[j]));
    assert_mat(&doc["expected"]["adjusted"], &want, "adjust");

    let doc = load(d, "bce_loss.json");
    let (p, y) = (mat(&doc["inputs"]["probs"]), mat(&doc["inputs"]["labels"]));
    let nc = p.len() as f64;
    let value: f64 = p.iter().zip(y.iter()).map(|(&p, &y)| xent(p, y)).sum::<f64>() / nc;
    assert!(close(f(&doc["expected"]["value"]), value));
    assert_mat(&doc["expected"]["grad_logits"], &((&p - &y) / nc), "bce grad");

    let doc = load(d, "wpc_loss.json");
    let i = &doc["inputs"];
    let (p, y, m, pi) = (mat(&i["probs"]), mat(&i["labels"]), mat(&i["mask"]), vecf(&i["pi1"]));
    let (n, c) = p.dim();
    let mut value = 0.0;
    let mut grad = Array2::zeros((n, c));
    for r in 0..n {
        for k in 0..c {
            if m[[r, k]] == 1.0 {
                let q = adjust_oracle(p[[r, k]], pi[k]);
                value += xent(q, y[[r, k]]) / (c * n) as f64;
                grad[[r, k]] = (q - y[[r, k]]) / (c * n) as f64;
            }
        }
    }
    assert!(close(f(&doc["expected"]["value"]), value));
    assert_mat(&doc["expected"]["grad_logits"], &grad, "wpc grad");

    let doc = load(d, "mse_consistency_loss.json");
    let i = &doc["inputs"];
    let (s, t, m) = (mat(&i["student"]), mat(&i["teacher"]), mat(&i["mask"]));
    let count = m.sum();
    let value: f64 = (0..s.len()).map(|k| {
        let (a, b, w) = (s.as_slice().unwrap()[k], t.as_slice().unwrap()[k], m.as_slice().unwrap()[k]);
        w * (a - b) * (a - b)
    }).sum::<f64>() / count;
    let grad = Array2::from_shape_fn(s.dim(), |ix| m[ix] * 2.0 * (s[ix] - t[ix]) * s[ix] * (1.0 - s[ix]) / count);
    assert!(close(f(&doc["expected"]["value"]), value));
    assert_mat(&doc["expected"]["grad_logits"], &grad, "mse grad");
    assert!(close(f(&doc["expected"]["single_entry_0.9_vs_0.4"]), 0.25));

    let doc = load(d, "forward.json");
    let i = &doc["inputs"];
    let (w1, b1, w2, b2, x) = (mat(&i["w1"]), vecf(&i["b1"]), mat(&i["w2"]), vecf(&i["b2"]), mat(&i["inputs"]));
    let mut probs = Array2::zeros((x.nrows(), w2.ncols()));
    for r in 0..x.nrows() {
        let h: Vec<f64> = (0..w1.ncols())
            .map(|j| ((0..x.ncols()).map(|k| x[[r, k]] * w1[[k, j]]).sum::<f64>() + b1[j]).max(0.0))
            .collect();
        for c in 0..w2.ncols() {
            probs[[r, c]] = sigmoid((0..h.len()).map(|j| h[j] * w2[[j, c]]).sum::<f64>() + b2[c]);
        }
    }
    assert_mat(&doc["expected"]["probs"], &probs, "forward");

    let doc = load(d, "local_prototypes.json");
    let (feats, labels) = (mat(&doc["inputs"]["features"]), mat(&doc["inputs"]["labels"]));
    for c in 0..3 {
        let [p0, p1] = prototype_oracle(&feats, &labels, c);
        let e = &doc["expected"][c.to_string()];
        check_side(&e["p0"], &p0);
        check_side(&e["p1"], &p1);
    }

    let doc = load(d, "global_prototypes.json");
    let annotators: Vec<Vec<usize>> = serde_json::from_value(doc["inputs"]["annotators"].clone()).unwrap();
    let mut locals = BTreeMap::new();
    for l in doc["inputs"]["locals"].as_array().unwrap() {
        let side = |v: &Value| (!v.is_null()).then(|| Array1::from(vecf(v)));
        let (k, c) = (l["client"].as_u64().unwrap() as usize, l["class"].as_u64().unwrap() as usize);
        locals.insert(
            (k, c),
            DualPrototype { class_id: c, p0: side(&l["prototype"]["p0"]), p1: side(&l["prototype"]["p1"]), support: (0, 0) },
        );
    }
    for c in 0..annotators.len() {
        let [p0, p1] = global_prototype_oracle(&locals, &annotators, c);
        check_side(&doc["expected"][c.to_string()]["p0"], &p0);
        check_side(&doc["expected"][c.to_string()]["p1"], &p1);
    }

    let doc = load(d, "confidence_scores.json");
    let (p0, p1, feats) = (vecf(&doc["inputs"]["p0"]), vecf(&doc["inputs"]["p1"]), mat(&doc["inputs"]["features"]));
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
    };
    let z = vecf(&doc["expected"]["z"]);
    for (r, zr) in z.iter().enumerate() {
        let row = feats.row(r).to_vec();
        assert!(close(*zr, cos(&p0, &row) - cos(&p1, &row)));
    }
    assert!(close(z[0], 1.0) && close(z[1], -1.0));

    let doc = load(d, "pseudo_label_selection.json");
    for case in doc["cases"].as_array().unwrap() {
        let cands: Vec<(usize, f64)> = serde_json::from_value(case["inputs"]["candidates"].clone()).unwrap();
        let (o0, o1) = selection_oracle(&cands, f(&case["inputs"]["tau0"]), f(&case["inputs"]["tau1"]));
        let got0: Vec<usize> = serde_json::from_value(case["expected"]["tagged0"].clone()).unwrap();
        let got1: Vec<usize> = serde_json::from_value(case["expected"]["tagged1"].clone()).unwrap();
        assert_eq!((got0, got1), (o0, o1));
    }

    let doc = load(d, "local_difficulty.json");
    let probs = mat(&doc["inputs"]["probs"]);
    let (lo, hi) = (f(&doc["inputs"]["low"]), f(&doc["inputs"]["high"]));
    let dv = vecf(&doc["expected"]["d"]);
    for (c, dc) in dv.iter().enumerate() {
        let k = probs.column(c).iter().filter(|&&p| p < lo || p > hi).count();
        assert!(close(*dc, k as f64 / probs.nrows() as f64));
    }
    assert!(close(dv[0], 0.5));

    let doc = load(d, "global_difficulty.json");
    let sizes: Vec<usize> = serde_json::from_value(doc["inputs"]["sizes"].clone()).unwrap();
    let annotators: Vec<Vec<usize>> = serde_json::from_value(doc["inputs"]["annotators"].clone()).unwrap();
    let mut locals = BTreeMap::new();
    for l in doc["inputs"]["locals"].as_array().unwrap() {
        locals.insert((l["client"].as_u64().unwrap() as usize, l["class"].as_u64().unwrap() as usize), f(&l["d"]));
    }
    let want = difficulty_oracle(&locals, &sizes, &annotators);
    let got = vecf(&doc["expected"]["d_global"]);
    assert!(got.iter().zip(&want).all(|(a, b)| close(*a, *b)));
    assert!(close(got[0], 0.5));

    let doc = load(d, "adaptive_thresholds.json");
    let dg = vecf(&doc["inputs"]["d_global"]);
    let (t0, t1) = (f(&doc["inputs"]["t0"]), f(&doc["inputs"]["t1"]));
    let (tau0, tau1) = (vecf(&doc["expected"]["tau0"]), vecf(&doc["expected"]["tau1"]));
    for c in 0..dg.len() {
        assert!(close(tau0[c], dg[c] * t0) && close(tau1[c], dg[c] * t1));
    }

    let doc = load(d, "fedavg_aggregate.json");
    let models: Vec<Vec<f64>> = serde_json::from_value(doc["inputs"]["models"].clone()).unwrap();
    let sizes: Vec<usize> = serde_json::from_value(doc["inputs"]["sizes"].clone()).unwrap();
    let want = fedavg_oracle(&models, &sizes);
    assert!(vecf(&doc["expected"]["aggregate"]).iter().zip(&want).all(|(a, b)| close(*a, *b)));

    let doc = load(d, "balanced_accuracy.json");
    assert!(close(f(&doc["expected"]["bacc"]), 0.5));
    assert!(close(f(&doc["expected"]["sensitivity"]), 0.5));

    for (name, oracle) in [("auc.json", auc_oracle as fn(&[f64], &[f64]) -> f64), ("average_precision.json", ap_oracle)] {
        let doc = load(d, name);
        let (s, y) = (mat(&doc["inputs"]["scores"]), mat(&doc["inputs"]["truth"]));
        let per = vecf(&doc["expected"]["per_class"]);
        for c in 0..s.ncols() {
            let want = oracle(&s.column(c).to_vec(), &y.column(c).to_vec());
            assert!(close(per[c], want), "{name} class {c}");
        }
    }
    assert!(close(f(&load(d, "auc.json")["expected"]["tie_case"]), 0.75));

    let doc = load(d, "mask_plan.json");
    for case in doc["cases"].as_array().unwrap() {
        let i = &case["inputs"];
        let (k, c, m) = (i["clients"].as_u64().unwrap() as usize, i["classes"].as_u64().unwrap() as usize, i["missing_per_client"].as_u64().unwrap() as usize);
        let missing: Vec<Vec<usize>> = serde_json::from_value(case["expected"]["missing"].clone()).unwrap();
        assert_eq!(missing.len(), k);
        assert!(missing.iter().all(|x| x.len() == m));
        assert!((0..c).all(|class| missing.iter().any(|x| !x.contains(&class))));
    }

    let doc = load(d, "partition.json");
    for case in doc["cases"].as_array().unwrap() {
        let n = case["inputs"]["n"].as_u64().unwrap() as usize;
        let ranges: Vec<[usize; 2]> = serde_json::from_value(case["expected"]["ranges"].clone()).unwrap();
        let mut next = 0;
        for [a, b] in &ranges {
            assert_eq!(*a, next);
            next = *b;
        }
        assert_eq!(next, n);
    }
}

fn check_side(got: &Value, want: &Option<Vec<f64>>) {
    match want {
        None => assert!(got.is_null()),
        Some(w) => {
            let g = vecf(got);
            assert!(g.iter().zip(w).all(|(a, b)| close(*a, *b)), "{g:?} vs {w:?}");
        }
    }
}
