//! Episode configuration: the on-disk schema, its defaults, and the resolved
//! runtime [`Scenario`].
//!
//! Every section except `scenario` may be omitted. Unknown keys are rejected.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cooperation::CooperationParams;
use crate::environment::{
    sticky_matrix, validate_transition, Context, ContextProcess, ModelOracle, TrainingParams,
};
use crate::error::{Error, Result};
use crate::ids::{ModelId, ServerId};
use crate::policy::{Limits, PolicyKind};
use crate::radio::{EnergyModel, RadioParams, ScheduleMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub users: u32,
    #[serde(default = "one")]
    pub servers: u32,
    /// Tasks each user offloads after learning.
    #[serde(default = "default_task_count")]
    pub task_count: u32,
    #[serde(default)]
    pub mode: TransmissionMode,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub radio: RadioConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub scheduling: SchedulingConfig,
    #[serde(default)]
    pub cooperation: CooperationParams,
}

fn one() -> u32 {
    1
}

fn default_task_count() -> u32 {
    100
}

/// How a user reaches the servers hosting the models it is still learning.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransmissionMode {
    /// Broadcast only to servers that still host a candidate; unicast once a
    /// single server is left.
    #[default]
    Adaptive,
    /// Always broadcast to every server that hosted a model at the start.
    Broadcast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_contexts")]
    pub contexts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_context: Option<String>,
    /// Row-stochastic matrix over `contexts`. When absent, a sticky chain
    /// with self-transition `stay_probability` is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_stay")]
    pub stay_probability: f64,
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub training: TrainingConfig,
}

fn default_contexts() -> Vec<String> {
    ["general", "daytime", "nighttime"]
        .map(String::from)
        .to_vec()
}

fn default_stay() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub server: u32,
    /// Fit probability per context label.
    pub fit: BTreeMap<String, f64>,
    /// Fit the model approaches under offline training; no training without it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_target: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_rate")]
    pub rate: f64,
    #[serde(default = "default_pilot_unit")]
    pub pilot_unit: u32,
    #[serde(default = "default_margin")]
    pub promotion_margin: f64,
}

fn default_rate() -> f64 {
    TrainingParams::default().rate
}

fn default_pilot_unit() -> u32 {
    TrainingParams::default().pilot_unit
}

fn default_margin() -> f64 {
    TrainingParams::default().promotion_margin
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            enabled: false,
            rate: default_rate(),
            pilot_unit: default_pilot_unit(),
            promotion_margin: default_margin(),
        }
    }
}

impl TrainingConfig {
    pub fn params(&self) -> TrainingParams {
        TrainingParams {
            rate: self.rate,
            pilot_unit: self.pilot_unit,
            promotion_margin: self.promotion_margin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioConfig {
    #[serde(default = "d_bandwidth")]
    pub bandwidth_hz: f64,
    #[serde(default = "d_noise")]
    pub noise_power_w: f64,
    #[serde(default = "d_power")]
    pub tx_power_w: f64,
    #[serde(default = "d_pilot_bits")]
    pub pilot_bits: f64,
    #[serde(default = "d_feedback")]
    pub feedback_time_s: f64,
    #[serde(default = "d_budget")]
    pub time_budget_s: f64,
    #[serde(default = "d_energy_model")]
    pub energy_model: EnergyModel,
    /// Mean power gain toward each server; missing entries default to 1.
    #[serde(default)]
    pub mean_gains: Vec<f64>,
    /// Per-user multiplier on every mean gain; missing entries default to 1.
    #[serde(default)]
    pub user_gain_scale: Vec<f64>,
}

fn d_bandwidth() -> f64 {
    RadioParams::default().bandwidth_hz
}
fn d_noise() -> f64 {
    RadioParams::default().noise_power_w
}
fn d_power() -> f64 {
    RadioParams::default().tx_power_w
}
fn d_pilot_bits() -> f64 {
    RadioParams::default().pilot_bits
}
fn d_feedback() -> f64 {
    RadioParams::default().feedback_time_s
}
fn d_budget() -> f64 {
    RadioParams::default().time_budget_s
}
fn d_energy_model() -> EnergyModel {
    RadioParams::default().energy_model
}

impl Default for RadioConfig {
    fn default() -> Self {
        let p = RadioParams::default();
        RadioConfig {
            bandwidth_hz: p.bandwidth_hz,
            noise_power_w: p.noise_power_w,
            tx_power_w: p.tx_power_w,
            pilot_bits: p.pilot_bits,
            feedback_time_s: p.feedback_time_s,
            time_budget_s: p.time_budget_s,
            energy_model: p.energy_model,
            mean_gains: Vec::new(),
            user_gain_scale: Vec::new(),
        }
    }
}

impl RadioConfig {
    pub fn params(&self) -> RadioParams {
        RadioParams {
            bandwidth_hz: self.bandwidth_hz,
            noise_power_w: self.noise_power_w,
            tx_power_w: self.tx_power_w,
            pilot_bits: self.pilot_bits,
            feedback_time_s: self.feedback_time_s,
            time_budget_s: self.time_budget_s,
            energy_model: self.energy_model,
        }
    }

    pub fn mean_gain(&self, user: usize, server: usize) -> f64 {
        let base = self.mean_gains.get(server).copied().unwrap_or(1.0);
        base * self.user_gain_scale.get(user).copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default = "d_kind")]
    pub kind: PolicyKind,
    /// Pilots per surviving model per round.
    #[serde(default = "d_batch")]
    pub batch_size: u32,
    /// Overall probability of misidentifying the best model.
    #[serde(default = "d_epsilon")]
    pub epsilon: f64,
    #[serde(default = "d_max_rounds")]
    pub max_rounds: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot_budget: Option<u64>,
    /// Exploration rounds for `uniform-fixed` and `explore-then-commit`.
    #[serde(default = "d_fixed_rounds")]
    pub fixed_rounds: u32,
}

fn d_kind() -> PolicyKind {
    PolicyKind::BatchedElimination
}
fn d_batch() -> u32 {
    25
}
fn d_epsilon() -> f64 {
    0.05
}
fn d_max_rounds() -> u32 {
    40
}
fn d_fixed_rounds() -> u32 {
    10
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            kind: d_kind(),
            batch_size: d_batch(),
            epsilon: d_epsilon(),
            max_rounds: d_max_rounds(),
            pilot_budget: None,
            fixed_rounds: d_fixed_rounds(),
        }
    }
}

impl PolicyConfig {
    pub fn limits(&self) -> Limits {
        Limits {
            max_rounds: self.max_rounds,
            pilot_budget: self.pilot_budget,
            fixed_rounds: self.fixed_rounds,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulingConfig {
    #[serde(default = "d_schedule_mode")]
    pub mode: ScheduleMode,
    /// Users granted the uplink per round; every user when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slots: Option<u32>,
    #[serde(default = "d_exponent")]
    pub alpha: f64,
    #[serde(default = "d_exponent")]
    pub beta: f64,
}

fn d_schedule_mode() -> ScheduleMode {
    ScheduleMode::Opportunistic
}
fn d_exponent() -> f64 {
    1.0
}

impl Default for SchedulingConfig {
    fn default() -> Self {
        SchedulingConfig {
            mode: d_schedule_mode(),
            slots: None,
            alpha: d_exponent(),
            beta: d_exponent(),
        }
    }
}

impl EpisodeConfig {
    /// Checks every invariant, naming the offending field path.
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, msg: String| Err(Error::config(format!("{path}: {msg}")));
        for (path, v) in [
            ("users", self.users),
            ("servers", self.servers),
            ("task_count", self.task_count),
            ("policy.batch_size", self.policy.batch_size),
            ("policy.max_rounds", self.policy.max_rounds),
            ("policy.fixed_rounds", self.policy.fixed_rounds),
        ] {
            if v == 0 {
                return bad(path, "must be at least 1".into());
            }
        }
        if !(self.policy.epsilon > 0.0 && self.policy.epsilon < 1.0) {
            return bad(
                "policy.epsilon",
                format!("must lie in (0, 1), got {}", self.policy.epsilon),
            );
        }
        if self.policy.pilot_budget == Some(0) {
            return bad("policy.pilot_budget", "must be at least 1".into());
        }
        if let Some(field) = self.radio.params().invalid_field() {
            return bad(
                &format!("radio.{field}"),
                "must be strictly positive (and exponent > 1 for monomial energy)".into(),
            );
        }
        for (i, g) in self.radio.mean_gains.iter().enumerate() {
            if !(*g > 0.0 && g.is_finite()) {
                return bad(&format!("radio.mean_gains[{i}]"), format!("must be positive, got {g}"));
            }
        }
        if self.radio.mean_gains.len() > self.servers as usize {
            return bad(
                "radio.mean_gains",
                format!(
                    "{} entries for {} servers",
                    self.radio.mean_gains.len(),
                    self.servers
                ),
            );
        }
        for (i, g) in self.radio.user_gain_scale.iter().enumerate() {
            if !(*g > 0.0 && g.is_finite()) {
                return bad(
                    &format!("radio.user_gain_scale[{i}]"),
                    format!("must be positive, got {g}"),
                );
            }
        }
        if let Some(0) = self.scheduling.slots {
            return bad("scheduling.slots", "must be at least 1".into());
        }
        if !(self.scheduling.alpha >= 0.0 && self.scheduling.beta >= 0.0) {
            return bad("scheduling", "alpha and beta must be nonnegative".into());
        }
        if self.cooperation.min_overlap == 0 {
            return bad("cooperation.min_overlap", "must be at least 1".into());
        }
        if self.cooperation.neighbors == 0 {
            return bad("cooperation.neighbors", "must be at least 1".into());
        }
        crate::radio::round_duration(self.policy.max_rounds, &self.radio.params()).map_err(
            |e| match e {
                Error::Infeasible(msg) => Error::Infeasible(format!(
                    "policy.max_rounds: {msg} (radio.feedback_time_s x max_rounds must stay below radio.time_budget_s)"
                )),
                other => other,
            },
        )?;
        Scenario::build(self).map(|_| ())
    }
}

/// Resolved scenario: context-indexed oracle tables and the context chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub contexts: Vec<String>,
    pub model_names: Vec<String>,
    pub oracles: Vec<ModelOracle>,
    pub training_targets: Vec<Option<Vec<f64>>>,
    pub training: Option<TrainingParams>,
    pub context_process: ContextProcess,
}

impl Scenario {
    pub fn build(config: &EpisodeConfig) -> Result<Self> {
        let sc = &config.scenario;
        let path_err = |path: String, msg: String| Error::config(format!("{path}: {msg}"));
        if sc.contexts.is_empty() {
            return Err(path_err("scenario.contexts".into(), "at least one context required".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &sc.contexts {
            if !seen.insert(c) {
                return Err(path_err("scenario.contexts".into(), format!("duplicate context `{c}`")));
            }
        }
        if sc.models.is_empty() {
            return Err(path_err("scenario.models".into(), "at least one model required".into()));
        }
        let ctx_index = |label: &str| sc.contexts.iter().position(|c| c == label);

        let table = |path: String, map: &BTreeMap<String, f64>| -> Result<Vec<f64>> {
            for (label, p) in map {
                if ctx_index(label).is_none() {
                    return Err(path_err(
                        format!("{path}.{label}"),
                        format!("unknown context; configured contexts are {:?}", sc.contexts),
                    ));
                }
                if !(0.0..=1.0).contains(p) {
                    return Err(path_err(format!("{path}.{label}"), format!("{p} is outside [0, 1]")));
                }
            }
            sc.contexts
                .iter()
                .map(|c| {
                    map.get(c).copied().ok_or_else(|| {
                        path_err(format!("{path}.{c}"), "missing fit probability for context".into())
                    })
                })
                .collect()
        };

        let mut names = std::collections::BTreeSet::new();
        let mut oracles = Vec::with_capacity(sc.models.len());
        let mut targets = Vec::with_capacity(sc.models.len());
        for (i, m) in sc.models.iter().enumerate() {
            let path = format!("scenario.models[{i}]");
            if m.name.is_empty() || !names.insert(m.name.as_str()) {
                return Err(path_err(format!("{path}.name"), format!("empty or duplicate name `{}`", m.name)));
            }
            if m.name.contains([',', ';', '|', ':', '"', '\n']) {
                return Err(path_err(
                    format!("{path}.name"),
                    "names may not contain , ; | : \" or newlines".into(),
                ));
            }
            if m.server >= config.servers {
                return Err(path_err(
                    format!("{path}.server"),
                    format!("server {} but only {} configured", m.server, config.servers),
                ));
            }
            let fit = table(format!("{path}.fit"), &m.fit)?;
            oracles.push(ModelOracle::new(ModelId::from(i), ServerId(m.server), fit)?);
            targets.push(
                m.training_target
                    .as_ref()
                    .map(|t| table(format!("{path}.training_target"), t))
                    .transpose()?,
            );
        }

        let transition = match &sc.transition {
            Some(t) => {
                if t.len() != sc.contexts.len() {
                    return Err(path_err(
                        "scenario.transition".into(),
                        format!("{} rows for {} contexts", t.len(), sc.contexts.len()),
                    ));
                }
                t.clone()
            }
            None => {
                if !(0.0..=1.0).contains(&sc.stay_probability) {
                    return Err(path_err(
                        "scenario.stay_probability".into(),
                        format!("{} is outside [0, 1]", sc.stay_probability),
                    ));
                }
                sticky_matrix(sc.contexts.len(), sc.stay_probability)
            }
        };
        validate_transition(&transition)
            .map_err(|e| path_err("scenario.transition".into(), e.to_string()))?;
        let initial = match &sc.initial_context {
            Some(label) => ctx_index(label).ok_or_else(|| {
                path_err("scenario.initial_context".into(), format!("unknown context `{label}`"))
            })?,
            None => 0,
        };
        let training = sc.training.enabled.then(|| sc.training.params());
        if let Some(t) = training {
            if !(t.rate > 0.0 && t.rate <= 1.0) {
                return Err(path_err("scenario.training.rate".into(), "must lie in (0, 1]".into()));
            }
            if t.pilot_unit == 0 {
                return Err(path_err("scenario.training.pilot_unit".into(), "must be at least 1".into()));
            }
            if t.promotion_margin.is_nan() || t.promotion_margin <= 0.0 {
                return Err(path_err(
                    "scenario.training.promotion_margin".into(),
                    "must be strictly positive".into(),
                ));
            }
        }
        Ok(Scenario {
            contexts: sc.contexts.clone(),
            model_names: sc.models.iter().map(|m| m.name.clone()).collect(),
            oracles,
            training_targets: targets,
            training,
            context_process: ContextProcess::new(transition, Context(initial as u32))?,
        })
    }

    pub fn model_id(&self, name: &str) -> Option<ModelId> {
        self.model_names.iter().position(|n| n == name).map(ModelId::from)
    }

    pub fn context_id(&self, label: &str) -> Option<Context> {
        self.contexts
            .iter()
            .position(|c| c == label)
            .map(|i| Context(i as u32))
    }
}
