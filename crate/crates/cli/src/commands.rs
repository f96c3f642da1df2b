//! The `run`, `ablate` and `masksweep` commands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fedmlp::protocol::{Ablation, DatasetBundle, Federation, FederationConfig, Mode, RoundRecord};

use crate::error::{CliError, Result};
use crate::output::{fmt_num, metrics_csv, summarize, write_atomic, write_toml, Csv, RunManifest};

/// Invocation details recorded in every manifest.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: &'static str,
    pub threads: Option<usize>,
    pub args: BTreeMap<String, String>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn write_manifest(
    out: &Path,
    inv: &Invocation,
    cfg: &FederationConfig,
    started: String,
    outputs: BTreeMap<String, PathBuf>,
) -> Result<PathBuf> {
    let path = out.join("manifest.toml");
    let mut outputs = outputs;
    outputs.insert("manifest".into(), path.clone());
    let m = RunManifest {
        command: inv.command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        threads: inv.threads,
        started,
        finished: now(),
        args: inv.args.clone(),
        outputs,
        config: cfg.clone(),
    };
    write_atomic(&path, m.to_toml()?.as_bytes())?;
    Ok(path)
}

/// Run every round, keeping the records completed before any failure.
pub fn execute(cfg: &FederationConfig, bundle: &DatasetBundle) -> (Vec<RoundRecord>, Option<CliError>) {
    let mut fed = match Federation::new(cfg.clone(), bundle) {
        Ok(f) => f,
        Err(e) => return (Vec::new(), Some(e.into())),
    };
    let mut records = Vec::with_capacity(cfg.protocol.rounds);
    while !fed.is_finished() {
        match fed.step() {
            Ok(r) => records.push(r),
            Err(e) => return (records, Some(e.into())),
        }
    }
    (records, None)
}

/// `run`: one experiment, writing manifest, metrics and summary.
pub fn cmd_run(cfg: &FederationConfig, out: &Path, inv: &Invocation) -> Result<()> {
    let started = now();
    let bundle = DatasetBundle::generate(cfg)?;
    let (records, failure) = execute(cfg, &bundle);
    let metrics = out.join("metrics.csv");
    let summary = out.join("summary.toml");
    write_atomic(&metrics, metrics_csv(&records, cfg.data.classes).render().as_bytes())?;
    write_toml(&summary, &summarize(cfg, &records))?;
    let outputs = BTreeMap::from([("metrics".into(), metrics), ("summary".into(), summary)]);
    write_manifest(out, inv, cfg, started, outputs)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Final-round test metrics of a completed run.
fn final_metrics(records: &[RoundRecord]) -> Result<(f64, f64, f64)> {
    records
        .last()
        .and_then(|r| r.eval.as_ref())
        .map(|e| (e.bacc, e.auc, e.map))
        .ok_or_else(|| CliError::Config("run produced no final evaluation".into()))
}

/// The cumulative component rows, applied to `base`.
pub fn ablation_configs(base: &FederationConfig) -> Vec<(&'static str, FederationConfig)> {
    Ablation::cumulative()
        .into_iter()
        .map(|(label, flags)| {
            let mut cfg = base.clone();
            cfg.mode = Mode::Fedmlp;
            cfg.ablation = flags;
            (label, cfg)
        })
        .collect()
}

/// `ablate`: the five cumulative component sets, each averaged over `seeds`
/// consecutive seeds starting at the configured one. Every row shares the
/// data of each seed. The table is rewritten after each row so partial
/// results survive a failure.
pub fn cmd_ablate(base: &FederationConfig, seeds: usize, out: &Path, inv: &Invocation) -> Result<()> {
    if seeds == 0 {
        return Err(CliError::Config("--seeds must be at least 1".into()));
    }
    let started = now();
    let seed_list: Vec<u64> = (0..seeds as u64).map(|i| base.seed + i).collect();
    let mut bundles = Vec::with_capacity(seeds);
    for &s in &seed_list {
        let mut c = base.clone();
        c.seed = s;
        bundles.push(DatasetBundle::generate(&c)?);
    }
    let mut header: Vec<String> = ["row", "component", "mld", "wpc", "cr", "st", "bacc", "auc", "map"]
        .into_iter()
        .map(String::from)
        .collect();
    header.extend(seed_list.iter().map(|s| format!("bacc_seed{s}")));
    let mut csv = Csv::new(header);
    let table = out.join("ablation.csv");
    let mut failure = None;
    for (i, (label, cfg)) in ablation_configs(base).into_iter().enumerate() {
        let mut per_seed = Vec::with_capacity(seeds);
        for (&s, bundle) in seed_list.iter().zip(&bundles) {
            let mut c = cfg.clone();
            c.seed = s;
            let (records, err) = execute(&c, bundle);
            if let Some(e) = err {
                failure = Some(e);
                break;
            }
            per_seed.push(final_metrics(&records)?);
            tracing::info!(row = label, seed = s, bacc = per_seed.last().map(|m| m.0), "ablation run done");
        }
        if failure.is_some() {
            break;
        }
        let n = per_seed.len() as f64;
        let mean = |f: fn(&(f64, f64, f64)) -> f64| per_seed.iter().map(f).sum::<f64>() / n;
        let a = cfg.ablation;
        let mut row = vec![
            (i + 1).to_string(),
            label.to_string(),
            a.mld.to_string(),
            a.wpc.to_string(),
            a.cr.to_string(),
            a.st.to_string(),
            fmt_num(mean(|m| m.0)),
            fmt_num(mean(|m| m.1)),
            fmt_num(mean(|m| m.2)),
        ];
        row.extend(per_seed.iter().map(|m| fmt_num(m.0)));
        csv.push(row);
        write_atomic(&table, csv.render().as_bytes())?;
    }
    if csv.rows.is_empty() {
        write_atomic(&table, csv.render().as_bytes())?;
    }
    write_manifest(out, inv, base, started, BTreeMap::from([("ablation".into(), table)]))?;
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Keep first occurrences, preserving order.
pub fn dedup_missing(values: &[usize]) -> Vec<usize> {
    let mut seen = Vec::new();
    for &v in values {
        if !seen.contains(&v) {
            seen.push(v);
        }
    }
    seen
}

/// `masksweep`: FedAvg versus FedMLP for each number of missing classes per
/// client. Values that cannot be realized get a `skipped` row.
pub fn cmd_masksweep(base: &FederationConfig, missing: &[usize], out: &Path, inv: &Invocation) -> Result<()> {
    let started = now();
    let values = if missing.is_empty() {
        (1..base.data.classes).collect()
    } else {
        dedup_missing(missing)
    };
    let mut csv = Csv::new([
        "missing",
        "status",
        "fedavg_bacc",
        "fedavg_auc",
        "fedavg_map",
        "fedmlp_bacc",
        "fedmlp_auc",
        "fedmlp_map",
    ]);
    let table = out.join("masksweep.csv");
    let mut failure = None;
    for &m in &values {
        let mut cfg = base.clone();
        cfg.data.missing_per_client = m;
        let bundle = match cfg.validate().and_then(|_| DatasetBundle::generate(&cfg)) {
            Ok(b) => b,
            Err(e) => {
                tracing::warn!(missing = m, error = %e, "skipping infeasible setting");
                let mut row = vec![m.to_string(), "skipped".to_string()];
                row.extend(std::iter::repeat_n(String::new(), 6));
                csv.push(row);
                write_atomic(&table, csv.render().as_bytes())?;
                continue;
            }
        };
        let mut row = vec![m.to_string(), "ok".to_string()];
        for mode in [Mode::Fedavg, Mode::Fedmlp] {
            let mut c = cfg.clone();
            c.mode = mode;
            let (records, err) = execute(&c, &bundle);
            if let Some(e) = err {
                failure = Some(e);
                break;
            }
            let (b, a, p) = final_metrics(&records)?;
            row.extend([fmt_num(b), fmt_num(a), fmt_num(p)]);
        }
        if failure.is_some() {
            break;
        }
        csv.push(row);
        write_atomic(&table, csv.render().as_bytes())?;
    }
    if csv.rows.is_empty() {
        write_atomic(&table, csv.render().as_bytes())?;
    }
    write_manifest(out, inv, base, started, BTreeMap::from([("masksweep".into(), table)]))?;
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
