//! Fit-probability estimation from pilot outcomes.
//!
//! A [`FitEstimate`] is a pair of counters: how many pilots a model answered
//! correctly and how many it was shown. Confidence intervals come from the
//! two-sided Hoeffding inequality, which holds for any distribution on
//! `[0, 1]` and gives a sample count that grows as `ln(1/epsilon)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Result of one pilot evaluated by a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Success,
    Failure,
}

impl Outcome {
    pub fn is_success(self) -> bool {
        matches!(self, Outcome::Success)
    }
}

impl From<bool> for Outcome {
    fn from(success: bool) -> Self {
        if success {
            Outcome::Success
        } else {
            Outcome::Failure
        }
    }
}

/// Running success/trial counts for one (user, model) pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FitEstimate {
    successes: u64,
    trials: u64,
}

impl FitEstimate {
    pub const EMPTY: FitEstimate = FitEstimate {
        successes: 0,
        trials: 0,
    };

    pub fn new(successes: u64, trials: u64) -> Result<Self> {
        if successes > trials {
            return Err(Error::param(format!(
                "successes ({successes}) exceed trials ({trials})"
            )));
        }
        Ok(FitEstimate { successes, trials })
    }

    pub fn successes(&self) -> u64 {
        self.successes
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    pub fn has_data(&self) -> bool {
        self.trials > 0
    }

    /// Empirical fit probability, or `None` before the first pilot.
    pub fn mean(&self) -> Option<f64> {
        (self.trials > 0).then(|| self.successes as f64 / self.trials as f64)
    }

    /// Returns a new estimate with one more trial.
    #[must_use]
    pub fn record(self, outcome: Outcome) -> Self {
        FitEstimate {
            successes: self.successes + u64::from(outcome.is_success()),
            trials: self.trials + 1,
        }
    }

    /// Merges a whole batch of outcomes at once.
    #[must_use]
    pub fn record_batch(self, successes: u64, trials: u64) -> Self {
        debug_assert!(successes <= trials);
        FitEstimate {
            successes: self.successes + successes,
            trials: self.trials + trials,
        }
    }

    pub fn bounds(&self, delta: f64) -> Result<Bounds> {
        bounds(self, delta)
    }
}

/// Functional form of [`FitEstimate::record`].
pub fn record_outcome(est: &FitEstimate, outcome: Outcome) -> FitEstimate {
    est.record(outcome)
}

/// Confidence interval around an empirical mean, clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lcb: f64,
    pub mean: f64,
    pub ucb: f64,
}

impl Bounds {
    pub fn width(&self) -> f64 {
        self.ucb - self.lcb
    }

    pub fn contains(&self, p: f64) -> bool {
        self.lcb <= p && p <= self.ucb
    }
}

/// Overall identification confidence and the per-arm, per-round failure
/// budget derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceParams {
    delta: f64,
    epsilon: f64,
}

impl ConfidenceParams {
    pub fn new(delta: f64, epsilon: f64) -> Result<Self> {
        check_probability("delta", delta)?;
        check_probability("epsilon", epsilon)?;
        Ok(ConfidenceParams { delta, epsilon })
    }

    /// Union-bound split: `delta = epsilon / (arms * max_rounds)`.
    pub fn from_epsilon(epsilon: f64, arms: usize, max_rounds: u32) -> Result<Self> {
        check_probability("epsilon", epsilon)?;
        if arms == 0 || max_rounds == 0 {
            return Err(Error::param(
                "arm count and round cap must be positive to split epsilon",
            ));
        }
        let delta = epsilon / (arms as f64 * f64::from(max_rounds));
        ConfidenceParams::new(delta, epsilon)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

fn check_probability(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must lie in (0, 1), got {value}")))
    }
}

/// Hoeffding radius `sqrt(ln(2/delta) / (2 n))`.
pub fn confidence_radius(trials: u64, delta: f64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::NoData(
            "confidence radius needs at least one trial".into(),
        ));
    }
    check_probability("delta", delta)?;
    Ok(((2.0 / delta).ln() / (2.0 * trials as f64)).sqrt())
}

pub fn bounds(est: &FitEstimate, delta: f64) -> Result<Bounds> {
    let mean = est
        .mean()
        .ok_or_else(|| Error::NoData("bounds requested for an estimate with no trials".into()))?;
    let radius = confidence_radius(est.trials, delta)?;
    Ok(Bounds {
        lcb: (mean - radius).clamp(0.0, 1.0),
        mean: mean.clamp(0.0, 1.0),
        ucb: (mean + radius).clamp(0.0, 1.0),
    })
}

/// Pilots per arm needed to separate two arms whose fit probabilities differ
/// by `gap` with confidence `1 - epsilon`: `ceil(2 ln(2/epsilon) / gap^2)`.
pub fn required_pilots(epsilon: f64, gap: f64) -> Result<u64> {
    check_probability("epsilon", epsilon)?;
    if gap == 0.0 {
        return Err(Error::Divergence(
            "a zero gap needs infinitely many pilots".into(),
        ));
    }
    if !(gap > 0.0 && gap <= 1.0) {
        return Err(Error::param(format!("gap must lie in (0, 1], got {gap}")));
    }
    let count = (2.0 / (gap * gap) * (2.0 / epsilon).ln()).ceil();
    Ok(count.max(1.0) as u64)
}

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Kullback-Leibler divergence `sum p_i ln(p_i / q_i)` of two discrete
/// distributions over the same support. Diagnostic only: the simulator never
/// observes the latent distributions it is defined over.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::param(format!(
            "support mismatch: {} vs {} outcomes",
            p.len(),
            q.len()
        )));
    }
    for (name, dist) in [("p", p), ("q", q)] {
        if dist.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::param(format!("{name} has an entry outside [0, 1]")));
        }
        let total: f64 = dist.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::param(format!(
                "{name} sums to {total}, not 1 within {NORMALIZATION_TOLERANCE:e}"
            )));
        }
    }
    let mut divergence = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::param(format!(
                "p is not absolutely continuous with respect to q at outcome {i}"
            )));
        }
        divergence += pi * (pi / qi).ln();
    }
    // Rounding can push an exact zero slightly negative.
    Ok(divergence.max(0.0))
}
