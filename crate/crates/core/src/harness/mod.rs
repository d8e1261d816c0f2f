//! Command-line plumbing: configuration parsing, persisted outputs,
//! parameter sweeps, and the built-in scenarios.

mod output;
pub mod scenarios;
mod sweep;

pub use output::{
    write_accuracy, write_metrics, write_sweep, Artifacts, RunManifest, ACCURACY_FILE,
    METRICS_FILE, SUMMARY_FILE, SWEEP_FILE, TIMELINE_FILE,
};
pub use sweep::{apply_override, sweep, SweepPoint};

use crate::config::EpisodeConfig;
use crate::error::{Error, Result};

/// Parses and validates a TOML configuration document, filling defaults.
pub fn parse_config(text: &str) -> Result<EpisodeConfig> {
    let config: EpisodeConfig = toml::from_str(text).map_err(|e| {
        let message = e.to_string();
        let hint = suggest_key(&message)
            .map(|s| format!("\ndid you mean `{s}`?"))
            .unwrap_or_default();
        Error::config(format!("{}{hint}", message.trim_end()))
    })?;
    config.validate()?;
    Ok(config)
}

pub fn serialize_config(config: &EpisodeConfig) -> Result<String> {
    toml::to_string(config).map_err(|e| Error::config(format!("cannot serialize config: {e}")))
}

/// Nearest valid key for serde's "unknown field `x`, expected one of ..."
/// message.
fn suggest_key(message: &str) -> Option<String> {
    let rest = message.split("unknown field `").nth(1)?;
    let (unknown, rest) = rest.split_once('`')?;
    let expected = rest.split_once("expected")?.1;
    expected
        .split('`')
        .skip(1)
        .step_by(2)
        .map(|cand| (strsim::jaro_winkler(unknown, cand), cand))
        .filter(|(score, _)| *score > 0.7)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c.to_string())
}
