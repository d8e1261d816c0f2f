//! Edge-hosted models as context-dependent Bernoulli oracles.
//!
//! Each [`ModelOracle`] answers a pilot correctly with the probability listed
//! for the current [`Context`]. Dataset shift comes from a first-order Markov
//! chain over contexts. Servers retrain a shadow copy of each model from the
//! pilots they receive, and the shadow replaces the served table only when its
//! weighted fit beats the served one by a margin.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::Outcome;
use crate::ids::{ModelId, ServerId};

const ROW_TOLERANCE: f64 = 1e-9;

/// Index into the scenario's context labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Context(pub u32);

impl Context {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOracle {
    pub model_id: ModelId,
    pub server_id: ServerId,
    /// True fit probability per context, indexed by [`Context`].
    pub fit_table: Vec<f64>,
    pub version: u32,
    pub shadow_table: Option<Vec<f64>>,
}

impl ModelOracle {
    pub fn new(model_id: ModelId, server_id: ServerId, fit_table: Vec<f64>) -> Result<Self> {
        check_table(&fit_table, "fit table")?;
        Ok(ModelOracle {
            model_id,
            server_id,
            fit_table,
            version: 0,
            shadow_table: None,
        })
    }

    pub fn fit(&self, ctx: Context) -> Result<f64> {
        self.fit_table.get(ctx.index()).copied().ok_or_else(|| {
            Error::config(format!(
                "context {} is not configured for {}",
                ctx.0, self.model_id
            ))
        })
    }

    pub fn weighted_fit(&self, weights: &[f64]) -> f64 {
        weighted(&self.fit_table, weights)
    }
}

fn check_table(table: &[f64], what: &str) -> Result<()> {
    match table.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        Some(p) => Err(Error::param(format!("{what} entry {p} lies outside [0, 1]"))),
        None => Ok(()),
    }
}

fn weighted(table: &[f64], weights: &[f64]) -> f64 {
    table.iter().zip(weights).map(|(p, w)| p * w).sum()
}

/// Draws the oracle's answer to one pilot in context `ctx`.
pub fn sample_response<R: Rng + ?Sized>(
    oracle: &ModelOracle,
    ctx: Context,
    rng: &mut R,
) -> Result<Outcome> {
    let p = oracle.fit(ctx)?;
    Ok(Outcome::from(rng.random::<f64>() < p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextProcess {
    transition: Vec<Vec<f64>>,
    current: Context,
}

impl ContextProcess {
    pub fn new(transition: Vec<Vec<f64>>, current: Context) -> Result<Self> {
        validate_transition(&transition)?;
        if current.index() >= transition.len() {
            return Err(Error::param(format!(
                "initial context {} outside the {} configured contexts",
                current.0,
                transition.len()
            )));
        }
        Ok(ContextProcess {
            transition,
            current,
        })
    }

    /// Chain that stays put with probability `stay` and otherwise moves to
    /// one of the other contexts uniformly.
    pub fn sticky(contexts: usize, stay: f64, current: Context) -> Result<Self> {
        ContextProcess::new(sticky_matrix(contexts, stay), current)
    }

    pub fn current(&self) -> Context {
        self.current
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn contexts(&self) -> usize {
        self.transition.len()
    }
}

pub fn sticky_matrix(contexts: usize, stay: f64) -> Vec<Vec<f64>> {
    if contexts == 1 {
        return vec![vec![1.0]];
    }
    let leave = (1.0 - stay) / (contexts - 1) as f64;
    (0..contexts)
        .map(|i| {
            (0..contexts)
                .map(|j| if i == j { stay } else { leave })
                .collect()
        })
        .collect()
}

/// Checks that `transition` is square and row-stochastic. Error messages
/// carry the offending row so the config layer can attach a field path.
pub fn validate_transition(transition: &[Vec<f64>]) -> Result<()> {
    let n = transition.len();
    if n == 0 {
        return Err(Error::param("transition matrix is empty"));
    }
    for (i, row) in transition.iter().enumerate() {
        if row.len() != n {
            return Err(Error::param(format!(
                "row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        if row.iter().any(|&x| x.is_nan() || x < 0.0) {
            return Err(Error::param(format!("row {i} has a negative entry")));
        }
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > ROW_TOLERANCE {
            return Err(Error::param(format!(
                "row {i} sums to {total}, expected 1 within tolerance {ROW_TOLERANCE:e}"
            )));
        }
    }
    Ok(())
}

pub fn step_context<R: Rng + ?Sized>(proc: &ContextProcess, rng: &mut R) -> ContextProcess {
    let row = &proc.transition[proc.current.index()];
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut next = None;
    for (j, &p) in row.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        next = Some(j);
        if u < acc {
            break;
        }
    }
    // Rows sum to 1 within tolerance, so falling off the end lands on the
    // last reachable context.
    let next = next.expect("validated row has a positive entry");
    ContextProcess {
        transition: proc.transition.clone(),
        current: Context(next as u32),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingParams {
    /// Fraction of the remaining gap closed per `pilot_unit` pilots.
    pub rate: f64,
    pub pilot_unit: u32,
    pub promotion_margin: f64,
}

impl Default for TrainingParams {
    fn default() -> Self {
        TrainingParams {
            rate: 0.5,
            pilot_unit: 50,
            promotion_margin: 0.05,
        }
    }
}

/// Offline training step: moves the shadow copy toward `target` by
/// `1 - (1 - rate)^(pilot_count / pilot_unit)` of the remaining gap. The
/// served table is never touched.
pub fn train_shadow(
    oracle: &ModelOracle,
    pilot_count: u64,
    target: &[f64],
    params: &TrainingParams,
) -> Result<ModelOracle> {
    if !(params.rate > 0.0 && params.rate <= 1.0) {
        return Err(Error::param(format!(
            "training rate must lie in (0, 1], got {}",
            params.rate
        )));
    }
    if params.pilot_unit == 0 {
        return Err(Error::param("pilot_unit must be at least 1"));
    }
    if target.len() != oracle.fit_table.len() {
        return Err(Error::param(format!(
            "training target covers {} contexts, model has {}",
            target.len(),
            oracle.fit_table.len()
        )));
    }
    check_table(target, "training target")?;

    let mut next = oracle.clone();
    let shadow = next
        .shadow_table
        .get_or_insert_with(|| oracle.fit_table.clone());
    let step = 1.0 - (1.0 - params.rate).powf(pilot_count as f64 / f64::from(params.pilot_unit));
    for (s, &t) in shadow.iter_mut().zip(target) {
        *s = (*s + step * (t - *s)).clamp(0.0, 1.0);
    }
    Ok(next)
}

/// Replaces the served table with the shadow when the shadow's weighted fit
/// exceeds the served one by more than `margin`.
pub fn promote_shadow(oracle: &ModelOracle, ctx_weights: &[f64], margin: f64) -> Result<ModelOracle> {
    let total: f64 = ctx_weights.iter().sum();
    if ctx_weights.len() != oracle.fit_table.len()
        || ctx_weights.iter().any(|&w| w < 0.0)
        || (total - 1.0).abs() > ROW_TOLERANCE
    {
        return Err(Error::param(format!(
            "context weights must be {} nonnegative values summing to 1 within {ROW_TOLERANCE:e}",
            oracle.fit_table.len()
        )));
    }
    let Some(shadow) = &oracle.shadow_table else {
        return Err(Error::StateCorruption(format!(
            "{} has no shadow copy to promote",
            oracle.model_id
        )));
    };
    let mut next = oracle.clone();
    if weighted(shadow, ctx_weights) > oracle.weighted_fit(ctx_weights) + margin {
        next.fit_table = shadow.clone();
        next.version += 1;
    }
    Ok(next)
}
