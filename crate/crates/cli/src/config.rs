//! Job configuration: defaults, a JSON file and `key=value` overrides are
//! merged, then parsed strictly so unknown keys are rejected.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

/// Recursively merges `patch` into `base`; objects merge key by key, any
/// other value replaces.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `a.b.c=value`; the value is read as JSON when possible and as a
/// plain string otherwise.
pub fn parse_override(s: &str) -> Result<Value> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {s:?} is not key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Usage(format!("override {s:?} has an empty key")));
    }
    let mut value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    for part in key.rsplit('.') {
        let mut m = Map::new();
        m.insert(part.to_string(), value);
        value = Value::Object(m);
    }
    Ok(value)
}

pub fn load<T: Serialize + DeserializeOwned + Default>(file: Option<&Path>, overrides: &[String]) -> Result<T> {
    let mut value = serde_json::to_value(T::default())?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let patch: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
        merge(&mut value, patch);
    }
    for o in overrides {
        merge(&mut value, parse_override(o)?);
    }
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
}

/// Writes `value` as pretty JSON to `dir/name`.
pub fn write_effective(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}
