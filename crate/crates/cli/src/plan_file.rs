//! Plan loading: JSON file (or the benchmark default), `--set` overrides,
//! validation, and data-path resolution.

use std::path::{Path, PathBuf};

use anyhow::Context;
use diffcdr::pipeline::{DataSpec, ExperimentPlan};
use serde_json::Value;

/// A plan that failed to parse or validate. Maps to exit code 2.
#[derive(Debug)]
pub struct PlanError(pub String);

impl std::fmt::Display for PlanError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for PlanError {}

fn plan_err(msg: impl Into<String>) -> anyhow::Error {
    PlanError(msg.into()).into()
}

/// Sets `value` at a dotted `path`, creating objects along the way.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> anyhow::Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(plan_err(format!("{path}: malformed key path")));
    }
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let Value::Object(map) = node else {
            return Err(plan_err(format!("{}: not an object", keys[..i].join("."))));
        };
        if i + 1 == keys.len() {
            map.insert(key.to_string(), value);
            return Ok(());
        }
        node = map.entry(key.to_string()).or_insert(Value::Null);
    }
    unreachable!("loop returns on the last key")
}

/// Parses one `key=value` override. The value is read as JSON when it
/// parses, otherwise as a plain string.
pub fn parse_override(raw: &str) -> anyhow::Result<(String, Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| plan_err(format!("--set {raw}: expected key=value")))?;
    let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    Ok((key.trim().to_string(), value))
}

/// Builds the effective plan: the file at `path` (else `fallback`, else the
/// benchmark plan for `seed`), then `--seed`, then each `--set` in order.
pub fn load_plan(
    path: Option<&Path>,
    fallback: Option<&ExperimentPlan>,
    seed: Option<u64>,
    overrides: &[String],
) -> anyhow::Result<ExperimentPlan> {
    let (mut value, base_dir) = match path {
        Some(p) => {
            if !p.exists() {
                return Err(plan_err(format!("plan: file not found: {}", p.display())));
            }
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let value: Value =
                serde_json::from_str(&text).map_err(|e| plan_err(format!("plan: {}: {e}", p.display())))?;
            let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (value, dir)
        }
        None => {
            let base = match fallback {
                Some(plan) => plan.clone(),
                None => ExperimentPlan::benchmark(seed.unwrap_or(0)),
            };
            (serde_json::to_value(base)?, PathBuf::from("."))
        }
    };
    if let Some(s) = seed {
        set_path(&mut value, "seed", Value::from(s))?;
    }
    for raw in overrides {
        let (key, v) = parse_override(raw)?;
        set_path(&mut value, &key, v)?;
    }
    let mut plan: ExperimentPlan = serde_path_to_error::deserialize(value).map_err(|e| {
        let at = e.path().to_string();
        plan_err(format!("{at}: {}", e.into_inner()))
    })?;
    plan.validate().map_err(|e| match e {
        diffcdr::Error::InvalidArgument(msg) => plan_err(msg),
        other => plan_err(other.to_string()),
    })?;
    resolve_data_paths(&mut plan, &base_dir);
    Ok(plan)
}

/// Makes relative CSV paths relative to the plan file's directory.
pub fn resolve_data_paths(plan: &mut ExperimentPlan, base: &Path) {
    if let Some(DataSpec::Csv { source, target }) = plan.data.as_mut() {
        for p in [source, target] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}
