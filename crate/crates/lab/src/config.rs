//! Run configuration files: one JSON document plus dotted-path overrides.

use std::path::Path;

use serde_json::Value;
use sha2::{Digest, Sha256};
use uda_core::trainer::RunConfig;

use crate::error::{LabError, Result};

/// Applies `key.path=value` to a JSON document. The value is parsed as JSON
/// when possible (numbers, booleans, arrays) and taken as a string otherwise.
/// Missing intermediate objects are created.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| LabError::Config(format!("override '{assignment}' is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(LabError::Config(format!("override '{assignment}' has an empty key")));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut cur = doc;
    for (i, key) in keys.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| LabError::Config(format!("override '{path}': '{}' is not an object", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("keys is nonempty")
}

/// Parses and validates a config document after applying overrides.
pub fn from_value(mut doc: Value, overrides: &[String]) -> Result<RunConfig> {
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| LabError::Config(e.to_string()))?;
    cfg.validate().map_err(|e| LabError::Config(e.to_string()))?;
    Ok(cfg)
}

pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| LabError::ConfigFile { path: path.to_path_buf(), reason: e.to_string() })?;
    let doc: Value = serde_json::from_str(&text)
        .map_err(|e| LabError::ConfigFile { path: path.to_path_buf(), reason: e.to_string() })?;
    from_value(doc, overrides)
}

/// Overrides applied on top of an in-memory config.
pub fn with_overrides(cfg: &RunConfig, overrides: &[String]) -> Result<RunConfig> {
    let doc = serde_json::to_value(cfg).map_err(|e| LabError::Config(e.to_string()))?;
    from_value(doc, overrides)
}

pub fn to_json(cfg: &RunConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("RunConfig serializes") + "\n"
}

/// First 12 hex digits of the SHA-256 of the compact JSON encoding.
pub fn config_hash(cfg: &RunConfig) -> String {
    let s = serde_json::to_string(cfg).expect("RunConfig serializes");
    hex::encode(Sha256::digest(s.as_bytes()))[..12].to_string()
}
