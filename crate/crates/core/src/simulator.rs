//! Episode driver.
//!
//! One episode runs the full learning loop for every user: fading draw,
//! batch plan, uplink energy, oracle sampling, estimate update, elimination,
//! offline shadow training, and a context step. Once every user's policy
//! stops, each user offloads its tasks to the model it picked.
//!
//! Randomness is split into independent ChaCha streams keyed by purpose
//! (context, fading per link, pilot responses per user and model, tasks per
//! user). A model's answer sequence therefore does not depend on which other
//! models were sampled, so policies and transmission modes can be compared
//! seed by seed.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{EpisodeConfig, Scenario, TransmissionMode};
use crate::cooperation::{
    initial_deferral, models_to_activate, nearest_neighbors, predict_fit, UserProfile,
};
use crate::environment::{
    promote_shadow, sample_response, step_context, train_shadow, Context, ModelOracle,
};
use crate::error::{Error, Result};
use crate::estimator::{ConfidenceParams, FitEstimate};
use crate::ids::{ModelId, ServerId, UserId};
use crate::policy::PolicyState;
use crate::radio::{
    broadcast_rate, draw_gain, round_duration, schedule_users, Candidate, EnergyLedger, LinkState,
    RadioParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkMode {
    Broadcast,
    Unicast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionPlan {
    pub mode: LinkMode,
    pub servers: Vec<ServerId>,
    /// Weakest gain among `servers`; it sets the rate.
    pub min_gain: f64,
    pub rate_bps: f64,
}

/// Picks the servers a round's pilots go to: every server that still hosts
/// a surviving model, broadcast when there are several and unicast otherwise.
pub fn select_transmission_mode(
    link_gains: &BTreeMap<ServerId, f64>,
    survivors_per_server: &BTreeMap<ServerId, Vec<ModelId>>,
    params: &RadioParams,
) -> Result<TransmissionPlan> {
    let servers: Vec<ServerId> = survivors_per_server
        .iter()
        .filter(|(_, models)| !models.is_empty())
        .map(|(&s, _)| s)
        .collect();
    if servers.is_empty() {
        return Err(Error::StateCorruption(
            "no server hosts a surviving model".into(),
        ));
    }
    let gains = servers
        .iter()
        .map(|s| {
            link_gains
                .get(s)
                .copied()
                .ok_or_else(|| Error::StateCorruption(format!("no channel state for {s}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(TransmissionPlan {
        mode: if servers.len() > 1 {
            LinkMode::Broadcast
        } else {
            LinkMode::Unicast
        },
        min_gain: gains.iter().copied().fold(f64::INFINITY, f64::min),
        rate_bps: broadcast_rate(&gains, params.tx_power_w, params)?,
        servers,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EliminationEvent {
    pub user: UserId,
    pub round: u32,
    pub model: ModelId,
}

/// One user's round, kept for invariant checks and the timeline file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub user: UserId,
    pub round: u32,
    pub context: Context,
    pub targets: Vec<ModelId>,
    pub transmission: TransmissionPlan,
    pub duration_s: f64,
    pub bits: f64,
    pub energy_joules: f64,
    /// Estimates of every model the user has touched, after elimination.
    pub estimates: Vec<(ModelId, FitEstimate)>,
    pub survivors: Vec<ModelId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub seed: u64,
    pub chosen_model: Vec<ModelId>,
    pub identified_best: Vec<bool>,
    pub pilots_sent: Vec<u64>,
    /// Feedback messages received, summed over users.
    pub feedback_rounds: u64,
    pub energy_joules: Vec<f64>,
    pub task_accuracy: Vec<f64>,
    pub elimination_timeline: Vec<EliminationEvent>,
    pub dominant_context: Context,
    pub promotions: u32,
    pub delta: f64,
    pub rounds: Vec<RoundRecord>,
}

impl EpisodeMetrics {
    pub fn total_pilots(&self) -> u64 {
        self.pilots_sent.iter().sum()
    }

    pub fn total_energy(&self) -> f64 {
        self.energy_joules.iter().sum()
    }

    pub fn all_identified(&self) -> bool {
        self.identified_best.iter().all(|&b| b)
    }
}

#[derive(Clone, Copy)]
enum Purpose {
    Context = 1,
    Fading = 2,
    Pilots = 3,
    Tasks = 4,
}

fn stream(seed: u64, purpose: Purpose, a: usize, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) | ((a as u64) << 28) | b as u64);
    rng
}

struct UserSim {
    id: UserId,
    policy: PolicyState,
    links: Vec<LinkState>,
    fading: Vec<ChaCha8Rng>,
    pilots: Vec<ChaCha8Rng>,
}

impl UserSim {
    fn profile(&self) -> UserProfile {
        UserProfile::new(self.id, self.policy.estimates().clone())
    }
}

fn servers_of(models: impl IntoIterator<Item = ModelId>, oracles: &[ModelOracle]) -> BTreeMap<ServerId, Vec<ModelId>> {
    let mut map: BTreeMap<ServerId, Vec<ModelId>> = BTreeMap::new();
    for m in models {
        map.entry(oracles[m.index()].server_id).or_default().push(m);
    }
    map
}

pub fn run_episode(config: &EpisodeConfig) -> Result<EpisodeMetrics> {
    config.validate()?;
    let scenario = Scenario::build(config)?;
    let radio = config.radio.params();
    let policy_cfg = &config.policy;
    let models: Vec<ModelId> = (0..scenario.oracles.len()).map(ModelId::from).collect();
    let delta =
        ConfidenceParams::from_epsilon(policy_cfg.epsilon, models.len(), policy_cfg.max_rounds)?
            .delta();
    let duration = round_duration(policy_cfg.max_rounds, &radio)?;
    let seed = config.seed;
    let user_count = config.users as usize;
    let coop = config.cooperation;

    let mut users = Vec::with_capacity(user_count);
    for u in 0..user_count {
        let id = UserId::from(u);
        let mut policy = PolicyState::new(policy_cfg.kind, models.iter().copied(), policy_cfg.limits())?;
        if coop.enabled {
            let held = initial_deferral(&models, id, user_count, coop.min_overlap);
            policy = policy.defer(&held)?;
        }
        let links = (0..config.servers as usize)
            .map(|s| LinkState::new(id, ServerId::from(s), config.radio.mean_gain(u, s)))
            .collect::<Result<Vec<_>>>()?;
        users.push(UserSim {
            id,
            policy,
            links,
            fading: (0..config.servers as usize)
                .map(|s| stream(seed, Purpose::Fading, u, s))
                .collect(),
            pilots: (0..models.len())
                .map(|m| stream(seed, Purpose::Pilots, u, m))
                .collect(),
        });
    }

    let mut oracles = scenario.oracles.clone();
    let mut context = scenario.context_process.clone();
    let mut context_rng = stream(seed, Purpose::Context, 0, 0);
    let mut occupancy = vec![0u64; scenario.contexts.len()];
    let mut ledger = EnergyLedger::default();
    let mut timeline = Vec::new();
    let mut records = Vec::new();
    let slots = config.scheduling.slots.unwrap_or(config.users) as usize;

    loop {
        let active: Vec<usize> = (0..users.len())
            .filter(|&u| !users[u].policy.is_terminal())
            .collect();
        if active.is_empty() {
            break;
        }
        let ctx = context.current();
        occupancy[ctx.index()] += 1;

        for &u in &active {
            let user = &mut users[u];
            for (link, rng) in user.links.iter_mut().zip(user.fading.iter_mut()) {
                *link = draw_gain(link, rng);
            }
        }

        // Persistent broadcast keeps every server that hosted a model at the
        // start of the episode in the target set.
        let reach = |targets: &[ModelId]| match config.mode {
            TransmissionMode::Adaptive => servers_of(targets.iter().copied(), &oracles),
            TransmissionMode::Broadcast => servers_of(models.iter().copied(), &oracles),
        };

        let candidates: Vec<Candidate> = active
            .iter()
            .map(|&u| {
                let user = &users[u];
                let survivors: Vec<ModelId> = user.policy.survivors().iter().copied().collect();
                let gain = reach(&survivors)
                    .keys()
                    .map(|s| user.links[s.index()].gain)
                    .fold(f64::INFINITY, f64::min);
                Candidate {
                    user_id: user.id,
                    gain,
                    learning_score: user.policy.uncertainty(delta),
                }
            })
            .collect();
        let granted = schedule_users(
            &candidates,
            config.scheduling.mode,
            slots,
            config.scheduling.alpha,
            config.scheduling.beta,
        )?;

        let mut trained_pilots = vec![0u64; oracles.len()];
        for user_id in granted {
            let u = user_id.index();
            let user = &mut users[u];
            let plan = user.policy.plan_round(policy_cfg.batch_size)?;
            let gains: BTreeMap<ServerId, f64> = user
                .links
                .iter()
                .map(|l| (l.server_id, l.gain))
                .collect();
            let transmission = select_transmission_mode(&gains, &reach(&plan.targets), &radio)?;
            let bits = plan.total_pilots() as f64 * radio.pilot_bits;
            let energy = radio
                .energy_model
                .energy(bits, duration, transmission.min_gain, &radio)?;
            ledger.charge(plan.round_index, user.id, energy)?;

            let mut results = Vec::with_capacity(plan.targets.len());
            for &m in &plan.targets {
                let rng = &mut user.pilots[m.index()];
                let mut successes = 0;
                for _ in 0..plan.pilots_per_target {
                    successes += u64::from(sample_response(&oracles[m.index()], ctx, rng)?.is_success());
                }
                results.push((m, successes, u64::from(plan.pilots_per_target)));
                trained_pilots[m.index()] += u64::from(plan.pilots_per_target);
            }
            let observed = user.policy.observe(&results)?;
            let (next, removed) = observed.eliminate(delta)?;
            user.policy = next;
            timeline.extend(removed.into_iter().map(|model| EliminationEvent {
                user: user.id,
                round: plan.round_index,
                model,
            }));

            if coop.enabled && !users[u].policy.deferred().is_empty() {
                let profiles: Vec<UserProfile> = users.iter().map(UserSim::profile).collect();
                let me = &profiles[u];
                let neighbors = nearest_neighbors(me, &profiles, coop.min_overlap, coop.neighbors);
                let predictions: BTreeMap<ModelId, Option<f64>> = users[u]
                    .policy
                    .deferred()
                    .iter()
                    .map(|&m| (m, predict_fit(me, m, &neighbors)))
                    .collect();
                let join = models_to_activate(&users[u].policy, &predictions, delta);
                let mut next = users[u].policy.activate(&join);
                // A lone survivor whose lower bound beats every remaining
                // prediction ends the search.
                if next.survivors().len() == 1 && !next.deferred().is_empty() {
                    let (done, dropped) = next.drop_deferred();
                    timeline.extend(dropped.into_iter().map(|model| EliminationEvent {
                        user: users[u].id,
                        round: plan.round_index,
                        model,
                    }));
                    next = done;
                }
                users[u].policy = next;
            }

            let user = &users[u];
            records.push(RoundRecord {
                user: user.id,
                round: plan.round_index,
                context: ctx,
                targets: plan.targets.clone(),
                transmission,
                duration_s: duration,
                bits,
                energy_joules: energy,
                estimates: user
                    .policy
                    .estimates()
                    .iter()
                    .filter(|(_, e)| e.has_data())
                    .map(|(&m, &e)| (m, e))
                    .collect(),
                survivors: user.policy.survivors().iter().copied().collect(),
            });
        }

        if let Some(params) = scenario.training {
            for (m, &pilots) in trained_pilots.iter().enumerate() {
                if let (true, Some(target)) = (pilots > 0, &scenario.training_targets[m]) {
                    oracles[m] = train_shadow(&oracles[m], pilots, target, &params)?;
                }
            }
        }
        context = step_context(&context, &mut context_rng);
    }

    // Most-occupied context; an episode with no rounds counts its start.
    let dominant = if occupancy.iter().all(|&c| c == 0) {
        context.current()
    } else {
        let top = occupancy.iter().copied().max().unwrap_or(0);
        Context(occupancy.iter().position(|&c| c == top).unwrap_or(0) as u32)
    };
    let learned_tables = oracles.clone();

    let mut promotions = 0;
    if let Some(params) = scenario.training {
        let total: u64 = occupancy.iter().sum();
        let weights: Vec<f64> = if total == 0 {
            (0..occupancy.len())
                .map(|i| if i == dominant.index() { 1.0 } else { 0.0 })
                .collect()
        } else {
            occupancy.iter().map(|&c| c as f64 / total as f64).collect()
        };
        for oracle in oracles.iter_mut() {
            if oracle.shadow_table.is_some() {
                let next = promote_shadow(oracle, &weights, params.promotion_margin)?;
                promotions += next.version - oracle.version;
                *oracle = next;
            }
        }
    }

    let best_fit = learned_tables
        .iter()
        .map(|o| o.fit_table[dominant.index()])
        .fold(f64::NEG_INFINITY, f64::max);
    let offload_ctx = context.current();
    let mut chosen_model = Vec::with_capacity(user_count);
    let mut identified_best = Vec::with_capacity(user_count);
    let mut task_accuracy = Vec::with_capacity(user_count);
    for (u, user) in users.iter().enumerate() {
        let chosen = match user.policy.survivors().iter().next() {
            Some(&only) if user.policy.survivors().len() == 1 => only,
            _ => user.policy.select_best()?,
        };
        identified_best.push(learned_tables[chosen.index()].fit_table[dominant.index()] >= best_fit);
        let mut rng = stream(seed, Purpose::Tasks, u, 0);
        let mut successes = 0u32;
        for _ in 0..config.task_count {
            successes += u32::from(sample_response(&oracles[chosen.index()], offload_ctx, &mut rng)?.is_success());
        }
        task_accuracy.push(f64::from(successes) / f64::from(config.task_count));
        chosen_model.push(chosen);
    }

    Ok(EpisodeMetrics {
        seed,
        chosen_model,
        identified_best,
        pilots_sent: users.iter().map(|u| u.policy.pilots_sent()).collect(),
        feedback_rounds: users.iter().map(|u| u64::from(u.policy.round_index())).sum(),
        energy_joules: users.iter().map(|u| ledger.user_total(u.id)).collect(),
        task_accuracy,
        elimination_timeline: timeline,
        dominant_context: dominant,
        promotions,
        delta,
        rounds: records,
    })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Summary {
        let values: Vec<f64> = values.into_iter().collect();
        let n = values.len() as f64;
        if values.is_empty() {
            return Summary { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Summary { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub episodes: usize,
    pub energy_joules: Summary,
    pub pilots: Summary,
    pub feedback_rounds: Summary,
    pub task_accuracy: Summary,
    /// Fraction of (episode, user) pairs that picked the best model.
    pub identification_rate: f64,
}

impl Aggregates {
    pub fn from_rows(rows: &[EpisodeMetrics]) -> Aggregates {
        let picks: Vec<bool> = rows.iter().flat_map(|r| r.identified_best.iter().copied()).collect();
        Aggregates {
            episodes: rows.len(),
            energy_joules: Summary::of(rows.iter().map(EpisodeMetrics::total_energy)),
            pilots: Summary::of(rows.iter().map(|r| r.total_pilots() as f64)),
            feedback_rounds: Summary::of(rows.iter().map(|r| r.feedback_rounds as f64)),
            task_accuracy: Summary::of(rows.iter().flat_map(|r| r.task_accuracy.iter().copied())),
            identification_rate: if picks.is_empty() {
                f64::NAN
            } else {
                picks.iter().filter(|&&b| b).count() as f64 / picks.len() as f64
            },
        }
    }

    pub fn misidentification_rate(&self) -> f64 {
        1.0 - self.identification_rate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub config: EpisodeConfig,
    pub model_names: Vec<String>,
    pub context_names: Vec<String>,
    pub rows: Vec<EpisodeMetrics>,
    pub aggregates: Aggregates,
}

/// Runs one episode per seed in parallel. Rows come back in seed-list order.
pub fn run_experiment(config: &EpisodeConfig, seeds: &[u64]) -> Result<MetricsTable> {
    if seeds.is_empty() {
        return Err(Error::param("seed list is empty"));
    }
    config.validate()?;
    let scenario = Scenario::build(config)?;
    let rows = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = EpisodeConfig {
                seed,
                ..config.clone()
            };
            run_episode(&cfg).map_err(|e| Error::Episode {
                seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsTable {
        config: config.clone(),
        model_names: scenario.model_names,
        context_names: scenario.contexts,
        aggregates: Aggregates::from_rows(&rows),
        rows,
    })
}

/// Observed accuracy of one model in one context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCell {
    pub model: String,
    pub context: String,
    pub configured: f64,
    pub successes: u64,
    pub trials: u64,
}

impl AccuracyCell {
    pub fn observed(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

/// Offloads `tasks` tasks to every model in every context and records the
/// fraction answered correctly.
pub fn probe_accuracy(config: &EpisodeConfig, tasks: u64) -> Result<Vec<AccuracyCell>> {
    if tasks == 0 {
        return Err(Error::param("accuracy probe needs at least one task"));
    }
    let scenario = Scenario::build(config)?;
    let mut cells = Vec::new();
    for (m, oracle) in scenario.oracles.iter().enumerate() {
        for (c, label) in scenario.contexts.iter().enumerate() {
            let mut rng = stream(config.seed, Purpose::Tasks, m, c + 1);
            let ctx = Context(c as u32);
            let mut successes = 0;
            for _ in 0..tasks {
                successes += u64::from(sample_response(oracle, ctx, &mut rng)?.is_success());
            }
            cells.push(AccuracyCell {
                model: scenario.model_names[m].clone(),
                context: label.clone(),
                configured: oracle.fit_table[c],
                successes,
                trials: tasks,
            });
        }
    }
    Ok(cells)
}
