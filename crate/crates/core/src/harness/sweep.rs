use serde::Serialize;

use crate::config::EpisodeConfig;
use crate::error::{Error, Result};
use crate::policy::PolicyKind;
use crate::simulator::{run_experiment, Aggregates};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub policy: PolicyKind,
    pub param: String,
    pub value: String,
    pub aggregates: Aggregates,
}

/// Returns a copy of `config` with the dotted key `path` (for example
/// `policy.epsilon`) set to `value`, parsed as a TOML value when possible and
/// as a string otherwise.
pub fn apply_override(config: &EpisodeConfig, path: &str, value: &str) -> Result<EpisodeConfig> {
    let mut root = toml::Table::try_from(config)
        .map_err(|e| Error::config(format!("cannot represent config as a table: {e}")))?;
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));

    let keys: Vec<&str> = path.split('.').collect();
    let (last, parents) = keys
        .split_last()
        .ok_or_else(|| Error::config("empty parameter path"))?;
    let mut node = &mut root;
    for key in parents {
        node = node
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("{path}: `{key}` is not a section")))?;
    }
    node.insert(last.to_string(), parsed);
    let text = toml::to_string(&root)
        .map_err(|e| Error::config(format!("{path}: cannot serialize override: {e}")))?;
    super::parse_config(&text).map_err(|e| Error::config(format!("{path} = {value}: {e}")))
}

/// Runs the same seed list at every value of `param`, once per policy.
pub fn sweep(
    config: &EpisodeConfig,
    param: &str,
    values: &[String],
    policies: &[PolicyKind],
    seeds: &[u64],
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::param("sweep needs at least one value"));
    }
    let mut points = Vec::with_capacity(values.len() * policies.len().max(1));
    let policies = if policies.is_empty() {
        vec![config.policy.kind]
    } else {
        policies.to_vec()
    };
    for &policy in &policies {
        let mut base = config.clone();
        base.policy.kind = policy;
        for value in values {
            let cfg = apply_override(&base, param, value)?;
            let table = run_experiment(&cfg, seeds)?;
            points.push(SweepPoint {
                policy,
                param: param.to_string(),
                value: value.clone(),
                aggregates: table.aggregates,
            });
        }
    }
    Ok(points)
}
