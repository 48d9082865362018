//! Config file loading with dotted-key overrides.

use std::path::Path;

use anyhow::{bail, Context, Result};
use specmap_core::RunConfig;
use toml::{Table, Value};

/// Parses a `KEY=VALUE` override. The value is read as a TOML literal when
/// possible (numbers, booleans, arrays, quoted strings) and as a bare string
/// otherwise.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (key, raw) = s.split_once('=').with_context(|| format!("override {s:?} is not KEY=VALUE"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        bail!("override {s:?} has an empty key");
    }
    let raw = raw.trim();
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry.as_table_mut().with_context(|| format!("{key}: {p} is not a table"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Reads the config file (if any), applies overrides in order and validates.
pub fn load(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<RunConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str::<Table>(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => Table::new(),
    };
    for (k, v) in overrides {
        set_path(&mut table, k, v.clone())?;
    }
    let cfg: RunConfig = Value::Table(table).try_into().context("invalid configuration")?;
    cfg.validate().context("invalid configuration")?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_nest_and_type() {
        let o = vec![
            parse_override("model.epochs=12").unwrap(),
            parse_override("eval.test_city=ottawa").unwrap(),
            parse_override("eval.mode = \"loco\"").unwrap(),
            parse_override("sigma_m=250.5").unwrap(),
        ];
        let cfg = load(None, &o).unwrap();
        assert_eq!(cfg.model.epochs, 12);
        assert_eq!(cfg.eval.test_city.as_deref(), Some("ottawa"));
        assert_eq!(cfg.sigma_m, Some(250.5));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_override("novalue").is_err());
        assert!(load(None, &[parse_override("model.bogus=1").unwrap()]).is_err());
        assert!(load(None, &[parse_override("model.lambda=-1").unwrap()]).is_err());
        assert!(load(None, &[parse_override("zooms=[14, 15]").unwrap()]).is_err());
    }
}
