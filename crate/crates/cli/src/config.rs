//! Config files, manifests and `--set` overrides.
//!
//! A config file is TOML with the same layout as [`FederationConfig`]; every
//! key is optional. A run manifest is accepted too: its `[config]` table is
//! used and the rest ignored.

use std::path::Path;

use fedmlp::protocol::FederationConfig;
use serde::Deserialize;
use toml::{Table, Value};

use crate::error::{CliError, Result};

#[derive(Deserialize)]
struct Wrapped {
    config: FederationConfig,
}

/// Parse config text. Errors carry line and column.
pub fn parse_config(text: &str, origin: &str) -> Result<FederationConfig> {
    let table: Table = toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
    let cfg = if matches!(table.get("config"), Some(Value::Table(_))) {
        toml::from_str::<Wrapped>(text).map(|w| w.config)
    } else {
        toml::from_str::<FederationConfig>(text)
    };
    cfg.map_err(|e| CliError::Config(format!("{origin}: {e}")))
}

/// Parse the value side of `key=value`: any TOML value, else a bare string.
fn parse_value(raw: &str) -> Value {
    match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key just written"),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Apply one dotted `key=value` override to a config table.
pub fn apply_override(root: &mut Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set {spec}: expected key=value")))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("--set {spec}: malformed key")));
    }
    let (last, parents) = parts.split_last().expect("non-empty");
    let mut table = root;
    for p in parents {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("--set {spec}: {p} is not a table")))?;
    }
    table.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Resolve the effective config: file (or defaults), then overrides, then seed.
pub fn load_config(path: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<FederationConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            parse_config(&text, &p.display().to_string())?
        }
        None => FederationConfig::default(),
    };
    if !sets.is_empty() {
        let mut table = Table::try_from(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
        for s in sets {
            apply_override(&mut table, s)?;
        }
        cfg = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("--set: {}", e.message())))?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Canonical TOML of a config, with every default materialized.
pub fn to_toml(cfg: &FederationConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| CliError::Config(e.to_string()))
}
