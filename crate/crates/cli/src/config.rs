//! Three-layer settings: built-in defaults, then the `[subcommand]` table of
//! the config file, then command-line flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Default,
    Config,
    Flag,
}

pub struct Resolved<T> {
    pub value: T,
    pub json: Value,
    /// Which layer supplied each leaf, keyed by dotted path.
    pub sources: BTreeMap<String, Layer>,
}

pub fn load_config_file(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    Ok(serde_json::to_value(table)?)
}

fn strip_nulls(v: Value) -> Option<Value> {
    match v {
        Value::Null => None,
        Value::Object(m) => {
            let m: Map<String, Value> = m
                .into_iter()
                .filter_map(|(k, v)| strip_nulls(v).map(|v| (k, v)))
                .collect();
            (!m.is_empty()).then_some(Value::Object(m))
        }
        other => Some(other),
    }
}

fn merge(base: &mut Value, over: Value, layer: Layer, path: &str, sources: &mut BTreeMap<String, Layer>) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                merge(b.entry(k).or_insert(Value::Null), v, layer, &p, sources);
            }
        }
        (slot, v) => {
            mark(&v, layer, path, sources);
            *slot = v;
        }
    }
}

fn mark(v: &Value, layer: Layer, path: &str, sources: &mut BTreeMap<String, Layer>) {
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                mark(v, layer, &format!("{path}.{k}"), sources);
            }
        }
        _ => {
            sources.insert(path.to_string(), layer);
        }
    }
}

pub fn resolve<T, F>(section: &str, file: Option<&Value>, flags: &F) -> Result<Resolved<T>>
where
    T: Serialize + DeserializeOwned + Default,
    F: Serialize,
{
    let mut json = serde_json::to_value(T::default())?;
    let mut sources = BTreeMap::new();
    mark(&json, Layer::Default, "", &mut sources);
    let mut sources: BTreeMap<String, Layer> = sources
        .into_iter()
        .map(|(k, v)| (k.trim_start_matches('.').to_string(), v))
        .collect();
    if let Some(table) = file.and_then(|f| f.get(section)) {
        if !table.is_object() {
            anyhow::bail!("config section [{section}] is not a table");
        }
        merge(&mut json, table.clone(), Layer::Config, "", &mut sources);
    }
    if let Some(over) = strip_nulls(serde_json::to_value(flags)?) {
        merge(&mut json, over, Layer::Flag, "", &mut sources);
    }
    let value = T::deserialize(&json).with_context(|| format!("invalid [{section}] settings"))?;
    Ok(Resolved { value, json, sources })
}
