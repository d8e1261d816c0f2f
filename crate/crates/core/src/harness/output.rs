use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::EpisodeConfig;
use crate::error::{Error, Result};
use crate::estimator::bounds;
use crate::simulator::{AccuracyCell, Aggregates, MetricsTable};

use super::{serialize_config, SweepPoint};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMELINE_FILE: &str = "timeline.csv";
pub const ACCURACY_FILE: &str = "accuracy.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

pub const METRICS_HEADER: &str = "seed,users,chosen_model,identified_best,pilots_sent,\
feedback_rounds,energy_joules,task_accuracy,elimination_timeline,dominant_context,\
promotions,pilots_total,energy_total_joules";

const TIMELINE_HEADER: &str =
    "seed,user,round,context,model,successes,trials,mean,lcb,ucb,survivor,energy_joules";

/// Reproducibility record stored in the summary document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// SHA-256 of the resolved configuration in canonical TOML form.
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<String>,
    pub tool_version: String,
    /// Unix seconds. Taken from `SOURCE_DATE_EPOCH` so repeated runs stay
    /// byte-identical; absent when that variable is unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

impl RunManifest {
    pub fn new(config: &EpisodeConfig, seeds: &[u64], artifacts: Vec<String>) -> Result<Self> {
        Ok(RunManifest {
            config_digest: config_digest(config)?,
            seeds: seeds.to_vec(),
            artifacts,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: std::env::var("SOURCE_DATE_EPOCH")
                .ok()
                .and_then(|v| v.trim().parse().ok()),
        })
    }

    pub fn verify(&self, config: &EpisodeConfig) -> Result<bool> {
        Ok(config_digest(config)? == self.config_digest)
    }
}

pub fn config_digest(config: &EpisodeConfig) -> Result<String> {
    let text = serialize_config(config)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

#[derive(Debug, Serialize)]
struct SummaryDocument<'a> {
    models: &'a [String],
    contexts: &'a [String],
    policy: &'a str,
    epsilon: f64,
    aggregates: &'a Aggregates,
    manifest: &'a RunManifest,
}

/// Paths written by [`write_metrics`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub timeline: PathBuf,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items
        .into_iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// Renders the flat per-episode table. Floats use the shortest decimal that
/// parses back to the same value.
pub fn metrics_csv(table: &MetricsTable) -> String {
    let mut out = String::with_capacity(64 * (table.rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    let name = |m: crate::ModelId| table.model_names[m.index()].as_str();
    for r in &table.rows {
        let timeline = r
            .elimination_timeline
            .iter()
            .map(|e| format!("{}@{}:{}", e.user, e.round, name(e.model)))
            .collect::<Vec<_>>()
            .join(";");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.chosen_model.len(),
            join(r.chosen_model.iter().map(|&m| name(m))),
            join(&r.identified_best),
            join(&r.pilots_sent),
            r.feedback_rounds,
            join(&r.energy_joules),
            join(&r.task_accuracy),
            timeline,
            table.context_names[r.dominant_context.index()],
            r.promotions,
            r.total_pilots(),
            r.total_energy(),
        );
    }
    out
}

/// Per-round estimates for the first `episodes` rows: one line per
/// (round, model with data).
pub fn timeline_csv(table: &MetricsTable, episodes: usize) -> String {
    let mut out = String::from(TIMELINE_HEADER);
    out.push('\n');
    for r in table.rows.iter().take(episodes) {
        for rec in &r.rounds {
            for (m, est) in &rec.estimates {
                let Ok(b) = bounds(est, r.delta) else { continue };
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.seed,
                    rec.user.0,
                    rec.round,
                    table.context_names[rec.context.index()],
                    table.model_names[m.index()],
                    est.successes(),
                    est.trials(),
                    b.mean,
                    b.lcb,
                    b.ucb,
                    rec.survivors.contains(m),
                    rec.energy_joules,
                );
            }
        }
    }
    out
}

/// Writes `metrics.csv`, `timeline.csv` (first `timeline_episodes` rows) and
/// `summary.json` into `dir`. Output depends only on the table, so identical
/// configs and seeds give identical files.
pub fn write_metrics(table: &MetricsTable, dir: &Path, timeline_episodes: usize) -> Result<Artifacts> {
    ensure_dir(dir)?;
    let artifacts = Artifacts {
        metrics: dir.join(METRICS_FILE),
        summary: dir.join(SUMMARY_FILE),
        timeline: dir.join(TIMELINE_FILE),
    };
    write_file(&artifacts.metrics, &metrics_csv(table))?;
    write_file(&artifacts.timeline, &timeline_csv(table, timeline_episodes))?;

    let seeds: Vec<u64> = table.rows.iter().map(|r| r.seed).collect();
    let manifest = RunManifest::new(
        &table.config,
        &seeds,
        vec![
            METRICS_FILE.into(),
            TIMELINE_FILE.into(),
            SUMMARY_FILE.into(),
        ],
    )?;
    let doc = SummaryDocument {
        models: &table.model_names,
        contexts: &table.context_names,
        policy: table.config.policy.kind.name(),
        epsilon: table.config.policy.epsilon,
        aggregates: &table.aggregates,
        manifest: &manifest,
    };
    let mut json = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::param(format!("cannot serialize summary: {e}")))?;
    json.push('\n');
    write_file(&artifacts.summary, &json)?;
    Ok(artifacts)
}

pub fn write_accuracy(cells: &[AccuracyCell], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    let mut out = String::from("model,context,configured,successes,trials,observed\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            c.model,
            c.context,
            c.configured,
            c.successes,
            c.trials,
            c.observed()
        );
    }
    write_file(path, &out)
}

pub fn write_sweep(points: &[SweepPoint], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    let mut out = String::from(
        "policy,param,value,episodes,mean_energy_joules,std_energy_joules,mean_pilots,\
std_pilots,mean_feedback_rounds,identification_rate\n",
    );
    for p in points {
        let a = &p.aggregates;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            p.policy.name(),
            p.param,
            p.value,
            a.episodes,
            a.energy_joules.mean,
            a.energy_joules.std,
            a.pilots.mean,
            a.pilots.std,
            a.feedback_rounds.mean,
            a.identification_rate
        );
    }
    write_file(path, &out)
}
