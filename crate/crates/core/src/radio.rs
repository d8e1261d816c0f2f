//! Uplink channel and energy model.
//!
//! Channels are Rayleigh block-fading: the power gain of each link is redrawn
//! once per learning round from an exponential distribution. Sending `bits`
//! within `duration` seconds costs the inverted-Shannon energy
//! `duration * (noise / gain) * (2^(bits / (bandwidth * duration)) - 1)`,
//! which is strictly convex in the payload. A broadcast to several servers
//! runs at the rate of the worst link.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{ServerId, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub user_id: UserId,
    pub server_id: ServerId,
    /// Average power gain of the link; `gain` fluctuates around it.
    pub mean_gain: f64,
    pub gain: f64,
    pub block_index: u64,
}

impl LinkState {
    pub fn new(user_id: UserId, server_id: ServerId, mean_gain: f64) -> Result<Self> {
        if !(mean_gain > 0.0 && mean_gain.is_finite()) {
            return Err(Error::param(format!(
                "mean gain of {user_id}->{server_id} must be positive, got {mean_gain}"
            )));
        }
        Ok(LinkState {
            user_id,
            server_id,
            mean_gain,
            gain: mean_gain,
            block_index: 0,
        })
    }
}

/// Starts a new fading block: `gain = mean_gain * E` with `E ~ Exp(1)`.
pub fn draw_gain<R: Rng + ?Sized>(link: &LinkState, rng: &mut R) -> LinkState {
    let e: f64 = rng.sample(Exp1);
    LinkState {
        gain: (link.mean_gain * e).max(f64::MIN_POSITIVE),
        block_index: link.block_index + 1,
        ..*link
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnergyModel {
    /// Inverted Shannon capacity, see [`transmit_energy`].
    Shannon,
    /// `coefficient * duration * (bits / duration)^exponent`, independent of gain.
    Monomial { coefficient: f64, exponent: f64 },
}

impl EnergyModel {
    pub fn energy(&self, bits: f64, duration: f64, gain: f64, params: &RadioParams) -> Result<f64> {
        match *self {
            EnergyModel::Shannon => transmit_energy(bits, duration, gain, params),
            EnergyModel::Monomial {
                coefficient,
                exponent,
            } => {
                check_positive("bits", bits)?;
                check_positive("duration", duration)?;
                Ok(coefficient * duration * (bits / duration).powf(exponent))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioParams {
    pub bandwidth_hz: f64,
    /// Noise spectral density times bandwidth.
    pub noise_power_w: f64,
    pub tx_power_w: f64,
    pub pilot_bits: f64,
    pub feedback_time_s: f64,
    pub time_budget_s: f64,
    pub energy_model: EnergyModel,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            bandwidth_hz: 1e6,
            noise_power_w: 1e-9,
            tx_power_w: 0.1,
            pilot_bits: 1e5,
            feedback_time_s: 0.01,
            time_budget_s: 1.0,
            energy_model: EnergyModel::Shannon,
        }
    }
}

impl RadioParams {
    /// Returns the name of the first field that is not strictly positive.
    pub fn invalid_field(&self) -> Option<&'static str> {
        let fields = [
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_power_w", self.noise_power_w),
            ("tx_power_w", self.tx_power_w),
            ("pilot_bits", self.pilot_bits),
            ("feedback_time_s", self.feedback_time_s),
            ("time_budget_s", self.time_budget_s),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Some(name);
        }
        match self.energy_model {
            EnergyModel::Monomial {
                coefficient,
                exponent,
            } if !(coefficient > 0.0 && exponent > 1.0) => Some("energy_model"),
            _ => None,
        }
    }
}

fn check_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be positive, got {value}")))
    }
}

/// Energy to push `bits` through a link of power gain `gain` in `duration`
/// seconds at exactly the Shannon rate.
pub fn transmit_energy(bits: f64, duration: f64, gain: f64, params: &RadioParams) -> Result<f64> {
    check_positive("bits", bits)?;
    check_positive("duration", duration)?;
    check_positive("gain", gain)?;
    let spectral_efficiency = bits / (params.bandwidth_hz * duration);
    let excess = (spectral_efficiency * std::f64::consts::LN_2).exp_m1();
    Ok(duration * (params.noise_power_w / gain) * excess)
}

/// Transmission time per round when the time budget is split into
/// `round_count` rounds, each followed by one feedback message.
pub fn round_duration(round_count: u32, params: &RadioParams) -> Result<f64> {
    if round_count == 0 {
        return Err(Error::param("round count must be at least 1"));
    }
    let rounds = f64::from(round_count);
    let overhead = rounds * params.feedback_time_s;
    if overhead >= params.time_budget_s {
        return Err(Error::Infeasible(format!(
            "{round_count} feedback rounds of {} s exhaust the {} s budget",
            params.feedback_time_s, params.time_budget_s
        )));
    }
    Ok((params.time_budget_s - overhead) / rounds)
}

/// Shannon rate of a broadcast, limited by the weakest link.
pub fn broadcast_rate(gains: &[f64], power: f64, params: &RadioParams) -> Result<f64> {
    let min_gain = gains.iter().copied().fold(f64::INFINITY, f64::min);
    if gains.is_empty() {
        return Err(Error::param("broadcast needs at least one link"));
    }
    Ok(params.bandwidth_hz * (1.0 + power * min_gain / params.noise_power_w).log2())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    Opportunistic,
    LearningAware,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub user_id: UserId,
    pub gain: f64,
    /// Remaining uncertainty; larger means more left to learn.
    pub learning_score: f64,
}

/// Grants up to `slots` users the uplink. Opportunistic mode ranks by gain;
/// learning-aware mode by `gain^alpha * learning_score^beta`. Ties go to the
/// smaller user id. The result is in user-id order.
pub fn schedule_users(
    candidates: &[Candidate],
    mode: ScheduleMode,
    slots: usize,
    alpha: f64,
    beta: f64,
) -> Result<Vec<UserId>> {
    if candidates.is_empty() {
        return Err(Error::param("no candidates to schedule"));
    }
    if slots == 0 {
        return Err(Error::param("at least one slot is required"));
    }
    let score = |c: &Candidate| match mode {
        ScheduleMode::Opportunistic => c.gain,
        ScheduleMode::LearningAware => c.gain.powf(alpha) * c.learning_score.powf(beta),
    };
    let mut ranked: Vec<(f64, UserId)> = candidates.iter().map(|c| (score(c), c.user_id)).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut granted: Vec<UserId> = ranked.into_iter().take(slots).map(|(_, u)| u).collect();
    granted.sort();
    Ok(granted)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundCharge {
    pub round: u32,
    pub user_id: UserId,
    pub joules: f64,
}

/// Uplink energy spent, by user and by round.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    per_user: BTreeMap<UserId, f64>,
    per_round: Vec<RoundCharge>,
}

impl EnergyLedger {
    pub fn charge(&mut self, round: u32, user_id: UserId, joules: f64) -> Result<()> {
        if !(joules >= 0.0 && joules.is_finite()) {
            return Err(Error::param(format!(
                "energy charge for {user_id} in round {round} is {joules} J"
            )));
        }
        *self.per_user.entry(user_id).or_insert(0.0) += joules;
        self.per_round.push(RoundCharge {
            round,
            user_id,
            joules,
        });
        Ok(())
    }

    pub fn user_total(&self, user_id: UserId) -> f64 {
        self.per_user.get(&user_id).copied().unwrap_or(0.0)
    }

    pub fn per_round(&self) -> &[RoundCharge] {
        &self.per_round
    }

    pub fn total(&self) -> f64 {
        self.per_user.values().sum()
    }
}
