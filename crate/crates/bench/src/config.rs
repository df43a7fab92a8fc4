//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are skipped. Keys may use `-` or
//! `_` interchangeably, so `kkt-tol` and `kkt_tol` name the same setting.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

pub type ConfigMap = BTreeMap<String, String>;

pub fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_").to_ascii_lowercase()
}

pub fn parse_config(text: &str) -> Result<ConfigMap> {
    let mut out = ConfigMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected `key = value`, got `{line}`", lineno + 1);
        };
        let key = normalize_key(key);
        if key.is_empty() {
            bail!("line {}: empty key", lineno + 1);
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

pub fn load_config(path: &Path) -> Result<ConfigMap> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&text).with_context(|| format!("parsing config {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_dashes() {
        let map = parse_config("# grid\nkkt-tol = 1e-6\n\n  Gamma=10 \n").unwrap();
        assert_eq!(map.get("kkt_tol").unwrap(), "1e-6");
        assert_eq!(map.get("gamma").unwrap(), "10");
        assert!(parse_config("novalue\n").is_err());
    }
}
