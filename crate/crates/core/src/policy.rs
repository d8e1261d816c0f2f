//! Between-batch decisions: which surviving models get the next pilot batch,
//! and which are ruled out.
//!
//! Batched elimination samples every survivor equally, then drops any model
//! whose upper confidence bound falls strictly below the best lower
//! confidence bound among the survivors. Two baselines share the same
//! interface: uniform sampling for a fixed number of rounds, and
//! explore-then-commit.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{bounds, FitEstimate};
use crate::ids::ModelId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    BatchedElimination,
    UniformFixed,
    ExploreThenCommit,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [
        PolicyKind::BatchedElimination,
        PolicyKind::UniformFixed,
        PolicyKind::ExploreThenCommit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::BatchedElimination => "batched-elimination",
            PolicyKind::UniformFixed => "uniform-fixed",
            PolicyKind::ExploreThenCommit => "explore-then-commit",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        PolicyKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// Stopping limits shared by every policy kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub max_rounds: u32,
    /// Total pilots a user may send; `None` means unlimited.
    pub pilot_budget: Option<u64>,
    /// Exploration rounds for the two baselines.
    pub fixed_rounds: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub round_index: u32,
    pub targets: Vec<ModelId>,
    pub pilots_per_target: u32,
}

impl BatchPlan {
    pub fn total_pilots(&self) -> u64 {
        self.targets.len() as u64 * u64::from(self.pilots_per_target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    kind: PolicyKind,
    limits: Limits,
    survivors: BTreeSet<ModelId>,
    /// Models held back from sampling, in activation order. They are not
    /// survivors yet and elimination never looks at them.
    deferred: Vec<ModelId>,
    estimates: BTreeMap<ModelId, FitEstimate>,
    round_index: u32,
    pilots_sent: u64,
}

impl PolicyState {
    pub fn new(
        kind: PolicyKind,
        models: impl IntoIterator<Item = ModelId>,
        limits: Limits,
    ) -> Result<Self> {
        let survivors: BTreeSet<ModelId> = models.into_iter().collect();
        if survivors.is_empty() {
            return Err(Error::param("a policy needs at least one model"));
        }
        if limits.max_rounds == 0 {
            return Err(Error::param("max_rounds must be at least 1"));
        }
        let estimates = survivors
            .iter()
            .map(|&m| (m, FitEstimate::EMPTY))
            .collect();
        Ok(PolicyState {
            kind,
            limits,
            survivors,
            deferred: Vec::new(),
            estimates,
            round_index: 0,
            pilots_sent: 0,
        })
    }

    /// Builds a state from existing estimates; every estimated model survives.
    pub fn with_estimates(
        kind: PolicyKind,
        estimates: BTreeMap<ModelId, FitEstimate>,
        limits: Limits,
    ) -> Result<Self> {
        let mut state = PolicyState::new(kind, estimates.keys().copied(), limits)?;
        state.pilots_sent = estimates.values().map(FitEstimate::trials).sum();
        state.estimates = estimates;
        Ok(state)
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn limits(&self) -> Limits {
        self.limits
    }

    pub fn survivors(&self) -> &BTreeSet<ModelId> {
        &self.survivors
    }

    pub fn deferred(&self) -> &[ModelId] {
        &self.deferred
    }

    pub fn estimates(&self) -> &BTreeMap<ModelId, FitEstimate> {
        &self.estimates
    }

    pub fn estimate(&self, model: ModelId) -> Option<&FitEstimate> {
        self.estimates.get(&model)
    }

    pub fn round_index(&self) -> u32 {
        self.round_index
    }

    pub fn pilots_sent(&self) -> u64 {
        self.pilots_sent
    }

    #[must_use]
    pub fn with_round_index(mut self, round_index: u32) -> Self {
        self.round_index = round_index;
        self
    }

    /// Moves `models` out of the survivor set into the deferred queue, in the
    /// given order. At least one survivor must remain.
    pub fn defer(&self, models: &[ModelId]) -> Result<Self> {
        let mut next = self.clone();
        for &m in models {
            if !next.survivors.remove(&m) {
                return Err(Error::StateCorruption(format!(
                    "cannot defer {m}: not a survivor"
                )));
            }
            next.deferred.push(m);
        }
        if next.survivors.is_empty() {
            return Err(Error::StateCorruption(
                "deferring would leave no survivors".into(),
            ));
        }
        Ok(next)
    }

    /// Returns deferred models to the survivor set.
    pub fn activate(&self, models: &[ModelId]) -> Self {
        let mut next = self.clone();
        next.deferred.retain(|m| !models.contains(m));
        for &m in models {
            if self.deferred.contains(&m) {
                next.survivors.insert(m);
            }
        }
        next
    }

    /// Discards the deferred queue without sampling it. Returns the dropped
    /// models in queue order.
    pub fn drop_deferred(&self) -> (Self, Vec<ModelId>) {
        let mut next = self.clone();
        let dropped = std::mem::take(&mut next.deferred);
        (next, dropped)
    }

    pub fn plan_round(&self, batch_size: u32) -> Result<BatchPlan> {
        if self.survivors.is_empty() {
            return Err(Error::StateCorruption("survivor set is empty".into()));
        }
        if batch_size == 0 {
            return Err(Error::param("batch size must be at least 1"));
        }
        let committed = self.kind == PolicyKind::ExploreThenCommit
            && self.round_index >= self.limits.fixed_rounds
            && self.survivors.len() > 1;
        let targets = if committed {
            vec![self.select_best()?]
        } else {
            self.survivors.iter().copied().collect()
        };
        Ok(BatchPlan {
            round_index: self.round_index,
            targets,
            pilots_per_target: batch_size,
        })
    }

    /// Folds one round of outcomes into the estimates.
    pub fn observe(&self, results: &[(ModelId, u64, u64)]) -> Result<Self> {
        let mut next = self.clone();
        for &(model, successes, trials) in results {
            if successes > trials {
                return Err(Error::param(format!(
                    "{model}: {successes} successes out of {trials} trials"
                )));
            }
            let est = next.estimates.get_mut(&model).ok_or_else(|| {
                Error::StateCorruption(format!("observation for unknown model {model}"))
            })?;
            *est = est.record_batch(successes, trials);
            next.pilots_sent += trials;
        }
        Ok(next)
    }

    /// Closes a round: applies the policy's pruning rule and advances the
    /// round counter. Returns the new state and the models removed, in
    /// identifier order.
    pub fn eliminate(&self, delta: f64) -> Result<(Self, Vec<ModelId>)> {
        let mut next = self.clone();
        let removed = match self.kind {
            PolicyKind::BatchedElimination => self.dominated(delta)?,
            PolicyKind::UniformFixed | PolicyKind::ExploreThenCommit => Vec::new(),
        };
        for m in &removed {
            next.survivors.remove(m);
        }
        next.round_index += 1;
        Ok((next, removed))
    }

    /// Survivors whose upper bound is strictly below the largest lower bound
    /// among survivors.
    fn dominated(&self, delta: f64) -> Result<Vec<ModelId>> {
        let mut intervals = Vec::with_capacity(self.survivors.len());
        for &m in &self.survivors {
            let est = &self.estimates[&m];
            if !est.has_data() {
                return Err(Error::NoData(format!(
                    "{m} has no trials; elimination deferred"
                )));
            }
            intervals.push((m, bounds(est, delta)?));
        }
        let best_lcb = intervals
            .iter()
            .map(|(_, b)| b.lcb)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(intervals
            .into_iter()
            .filter(|(_, b)| b.ucb < best_lcb)
            .map(|(m, _)| m)
            .collect())
    }

    /// Survivor with the highest empirical mean; ties go to the smallest id.
    pub fn select_best(&self) -> Result<ModelId> {
        let mut best: Option<(ModelId, f64)> = None;
        for &m in &self.survivors {
            let Some(mean) = self.estimates[&m].mean() else {
                return Err(Error::NoData(format!("{m} has no trials")));
            };
            if best.is_none_or(|(_, top)| mean > top) {
                best = Some((m, mean));
            }
        }
        best.map(|(m, _)| m)
            .ok_or_else(|| Error::NoData("no survivor has data".into()))
    }

    /// Confidence-interval width at the empirical best survivor, or 1 when
    /// nothing has been measured yet.
    pub fn uncertainty(&self, delta: f64) -> f64 {
        self.select_best()
            .ok()
            .and_then(|m| bounds(&self.estimates[&m], delta).ok())
            .map_or(1.0, |b| b.width())
    }

    pub fn is_terminal(&self) -> bool {
        let round_cap = match self.kind {
            PolicyKind::BatchedElimination | PolicyKind::ExploreThenCommit => self.limits.max_rounds,
            PolicyKind::UniformFixed => self.limits.max_rounds.min(self.limits.fixed_rounds.max(1)),
        };
        (self.survivors.len() == 1 && self.deferred.is_empty())
            || self.round_index >= round_cap
            || self
                .limits
                .pilot_budget
                .is_some_and(|budget| self.pilots_sent >= budget)
    }
}
