//! Layered TOML configuration: files merged in order, then `--set` overrides.

use std::path::Path;

use canopy_core::io::read_text;
use canopy_core::{Error, Result};
use serde::de::DeserializeOwned;
use toml::{Table, Value};

pub fn load(files: &[impl AsRef<Path>], sets: &[String]) -> Result<Table> {
    let mut table = Table::new();
    for f in files {
        let f = f.as_ref();
        let text = read_text(f)?;
        let layer: Table = text
            .parse()
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", f.display())))?;
        merge(&mut table, layer);
    }
    for s in sets {
        apply_set(&mut table, s)?;
    }
    Ok(table)
}

/// Deep merge; tables merge key by key, anything else is replaced.
pub fn merge(into: &mut Table, from: Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(Value::Table(a)), Value::Table(b)) => merge(a, b),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

/// `a.b.c=value`; numeric segments index into arrays. The value is parsed as
/// TOML and falls back to a bare string.
pub fn apply_set(table: &mut Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("--set {spec}: expected key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidConfig(format!("--set {spec}: bad key")));
    }
    let mut root = Value::Table(std::mem::take(table));
    let res = set_path(&mut root, &parts, parse_value(raw.trim()), spec);
    if let Value::Table(t) = root {
        *table = t;
    }
    res
}

fn set_path(cur: &mut Value, parts: &[&str], value: Value, spec: &str) -> Result<()> {
    let (head, rest) = parts.split_first().expect("non-empty key path");
    let next = match cur {
        Value::Table(t) if rest.is_empty() => {
            t.insert((*head).to_owned(), value);
            return Ok(());
        }
        Value::Table(t) => t
            .entry((*head).to_owned())
            .or_insert_with(|| Value::Table(Table::new())),
        Value::Array(items) => {
            let len = items.len();
            let idx: usize = head
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("--set {spec}: expected an array index, got {head}")))?;
            let item = items
                .get_mut(idx)
                .ok_or_else(|| Error::InvalidConfig(format!("--set {spec}: index {idx} out of range ({len} items)")))?;
            if rest.is_empty() {
                *item = value;
                return Ok(());
            }
            item
        }
        _ => {
            return Err(Error::InvalidConfig(format!(
                "--set {spec}: {head} is inside a plain value"
            )))
        }
    };
    set_path(next, rest, value, spec)
}

/// Deserialize a section, rejecting unknown keys.
pub fn typed<T: DeserializeOwned>(table: &Table) -> Result<T> {
    let mut unknown = Vec::new();
    let value = Value::Table(table.clone());
    let out: T = serde_ignored::deserialize(value, |path| unknown.push(path.to_string()))
        .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string().trim().to_owned()))?;
    if !unknown.is_empty() {
        return Err(Error::InvalidConfig(format!("unknown key(s): {}", unknown.join(", "))));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_is_deep() {
        let mut a: Table = "x = 1\n[agg]\nnms_iou = 0.5\nconfidence_threshold = 0.1"
            .parse()
            .unwrap();
        let b: Table = "[agg]\nnms_iou = 0.7".parse().unwrap();
        merge(&mut a, b);
        assert_eq!(a["agg"]["nms_iou"].as_float(), Some(0.7));
        assert_eq!(a["agg"]["confidence_threshold"].as_float(), Some(0.1));
        assert_eq!(a["x"].as_integer(), Some(1));
    }

    #[test]
    fn set_parses_values_and_paths() {
        let mut t: Table = "[[rasters]]\nname = \"a\"\n[[rasters]]\nname = \"b\"".parse().unwrap();
        apply_set(&mut t, "aggregation.nms_iou=0.65").unwrap();
        apply_set(&mut t, "rasters.1.gt=crowns.geojson").unwrap();
        apply_set(&mut t, "rasters.0.synthetic.seed=7").unwrap();
        apply_set(&mut t, "thresholds=[0.5, 0.75]").unwrap();
        assert_eq!(t["aggregation"]["nms_iou"].as_float(), Some(0.65));
        assert_eq!(t["rasters"][1]["gt"].as_str(), Some("crowns.geojson"));
        assert_eq!(t["rasters"][0]["synthetic"]["seed"].as_integer(), Some(7));
        assert_eq!(t["thresholds"].as_array().map(Vec::len), Some(2));
        assert!(apply_set(&mut t, "novalue").is_err());
        assert!(apply_set(&mut t, "rasters.5.gt=x").is_err());
    }

    #[derive(Debug, serde::Deserialize)]
    #[allow(dead_code)]
    struct Small {
        a: u32,
    }

    #[test]
    fn unknown_keys_rejected() {
        let t: Table = "a = 1\nb = 2".parse().unwrap();
        let err = typed::<Small>(&t).unwrap_err();
        assert!(err.to_string().contains("unknown key(s): b"), "{err}");
    }
}
