//! Files written by the commands. Every write is whole-file atomic.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use fedmlp::protocol::{FederationConfig, RoundRecord};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Significant digits of every number in a CSV.
pub const SIG_DIGITS: usize = 6;

/// Fixed-point rendering with six significant digits. Formatting the parsed
/// output again gives the same string.
pub fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return format!("{:.*}", SIG_DIGITS - 1, 0.0);
    }
    // Let the exponent come from the already-rounded mantissa so 9.9999996
    // becomes 10.0000, not 10.00000.
    let sci = format!("{:.*e}", SIG_DIGITS - 1, x);
    let exp: i32 = sci.split_once('e').expect("exponent form").1.parse().expect("integer exponent");
    let decimals = (SIG_DIGITS as i32 - 1 - exp).max(0) as usize;
    let rounded: f64 = sci.parse().expect("valid float");
    format!("{rounded:.decimals$}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

/// Write `bytes` to `path` through a temp file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// A small CSV table; cells are pre-rendered strings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Csv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new(header: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Self {
        let mut lines = text.lines();
        let header = lines
            .next()
            .map(|l| l.split(',').map(String::from).collect())
            .unwrap_or_default();
        let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
        Self { header, rows }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Per-evaluation-round metrics; wall time is deliberately left out so the
/// file is reproducible byte for byte.
pub fn metrics_csv(records: &[RoundRecord], classes: usize) -> Csv {
    let mut header: Vec<String> = ["round", "stage", "bacc", "auc", "map", "coverage", "tag_precision", "tags_total"]
        .into_iter()
        .map(String::from)
        .collect();
    for prefix in ["auc", "ap", "sens", "spec", "d_global"] {
        header.extend((0..classes).map(|c| format!("{prefix}_c{c}")));
    }
    let mut csv = Csv::new(header);
    for r in records {
        let Some(e) = &r.eval else { continue };
        let mut row = vec![
            r.round.to_string(),
            r.stage.as_str().to_string(),
            fmt_num(e.bacc),
            fmt_num(e.auc),
            fmt_num(e.map),
            fmt_num(r.coverage),
            fmt_opt(r.tag_precision),
            r.tags_total.to_string(),
        ];
        row.extend(e.per_class_auc.iter().map(|v| fmt_opt(*v)));
        row.extend(e.per_class_ap.iter().map(|v| fmt_opt(*v)));
        row.extend(e.per_class_rates.iter().map(|v| fmt_opt(v.map(|r| r.sensitivity))));
        row.extend(e.per_class_rates.iter().map(|v| fmt_opt(v.map(|r| r.specificity))));
        row.extend(r.d_global.iter().map(|&v| fmt_num(v)));
        csv.push(row);
    }
    csv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub round: usize,
    pub bacc: f64,
    pub auc: f64,
    pub map: f64,
    /// Keyed `c0`, `c1`, ...; classes lacking both labels in the test set are absent.
    pub per_class_auc: BTreeMap<String, f64>,
    pub per_class_sensitivity: BTreeMap<String, f64>,
}

/// Pseudo-labeling outcome; only present for runs with a detection stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub coverage: f64,
    pub tags_total: usize,
    pub tag_precision: Option<f64>,
    pub d_global: Vec<f64>,
    /// Tag precision at the end of each detection-stage evaluation round.
    pub precision_by_round: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: String,
    pub seed: u64,
    pub rounds_completed: usize,
    #[serde(rename = "final")]
    pub final_metrics: Option<FinalMetrics>,
    pub detection: Option<DetectionSummary>,
}

fn keyed(values: impl Iterator<Item = Option<f64>>) -> BTreeMap<String, f64> {
    values
        .enumerate()
        .filter_map(|(c, v)| v.map(|v| (format!("c{c}"), v)))
        .collect()
}

pub fn summarize(cfg: &FederationConfig, records: &[RoundRecord]) -> Summary {
    let final_metrics = records.iter().rev().find_map(|r| {
        r.eval.as_ref().map(|e| FinalMetrics {
            round: r.round,
            bacc: e.bacc,
            auc: e.auc,
            map: e.map,
            per_class_auc: keyed(e.per_class_auc.iter().copied()),
            per_class_sensitivity: keyed(e.per_class_rates.iter().map(|r| r.map(|r| r.sensitivity))),
        })
    });
    let detection = cfg.recipe().detection.then(|| {
        let last = records.last();
        DetectionSummary {
            coverage: last.map_or(0.0, |r| r.coverage),
            tags_total: last.map_or(0, |r| r.tags_total),
            tag_precision: last.and_then(|r| r.tag_precision),
            d_global: last.map(|r| r.d_global.clone()).unwrap_or_default(),
            precision_by_round: records
                .iter()
                .filter(|r| r.eval.is_some())
                .filter_map(|r| r.tag_precision.map(|p| (r.round.to_string(), p)))
                .collect(),
        }
    });
    Summary {
        mode: serde_plain_mode(cfg),
        seed: cfg.seed,
        rounds_completed: records.len(),
        final_metrics,
        detection,
    }
}

fn serde_plain_mode(cfg: &FederationConfig) -> String {
    match toml::Value::try_from(cfg.mode) {
        Ok(toml::Value::String(s)) => s,
        _ => format!("{:?}", cfg.mode),
    }
}

/// Everything needed to reproduce a command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub started: String,
    pub finished: String,
    /// Extra command arguments (seed count, sweep values).
    pub args: BTreeMap<String, String>,
    /// Output name -> file path.
    pub outputs: BTreeMap<String, PathBuf>,
    pub config: FederationConfig,
}

impl RunManifest {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| CliError::Config(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn formatting_examples() {
        assert_eq!(fmt_num(0.912345678), "0.912346");
        assert_eq!(fmt_num(12.3456789), "12.3457");
        assert_eq!(fmt_num(0.000123456789), "0.000123457");
        assert_eq!(fmt_num(9.9999996), "10.0000");
        assert_eq!(fmt_num(1234567.0), "1234570");
        assert_eq!(fmt_num(0.0), "0.00000");
        assert_eq!(fmt_num(-0.0), "0.00000");
        assert_eq!(fmt_num(-0.5), "-0.500000");
        assert_eq!(fmt_num(1.0), "1.00000");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(5000))]

        #[test]
        fn formatted_values_roundtrip(x in prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL) {
            let s = fmt_num(x);
            let back: f64 = s.parse().unwrap();
            prop_assert_eq!(fmt_num(back), s);
        }

        #[test]
        fn unit_interval_keeps_six_digits(x in 1e-6f64..1.0) {
            let s = fmt_num(x);
            let digits: String = s.chars().filter(char::is_ascii_digit).collect();
            prop_assert_eq!(digits.trim_start_matches('0').len(), SIG_DIGITS);
        }
    }

    #[test]
    fn csv_roundtrip() {
        let mut c = Csv::new(["a", "b"]);
        c.push(vec!["1".into(), "".into()]);
        assert_eq!(Csv::parse(&c.render()), c);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
