//! User cooperation through preference similarity.
//!
//! Users compare their measured fit probabilities with each other (Pearson
//! correlation over the models both have sampled) and predict the fit of
//! models they have not tried from similar neighbors. Predictions only decide
//! the order in which models join exploration. Elimination always runs on a
//! user's own measurements.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::estimator::{bounds, FitEstimate};
use crate::ids::{ModelId, UserId};
use crate::policy::PolicyState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: UserId,
    pub estimates: BTreeMap<ModelId, FitEstimate>,
}

impl UserProfile {
    pub fn new(user_id: UserId, estimates: BTreeMap<ModelId, FitEstimate>) -> Self {
        UserProfile { user_id, estimates }
    }

    fn mean(&self, model: ModelId) -> Option<f64> {
        self.estimates.get(&model).and_then(FitEstimate::mean)
    }
}

/// Pearson correlation of empirical means over models both users have
/// sampled. `None` when fewer than `min_overlap` models overlap; `Some(0.0)`
/// when either side is constant on the overlap.
pub fn similarity(u: &UserProfile, v: &UserProfile, min_overlap: usize) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = u
        .estimates
        .keys()
        .filter_map(|&m| Some((u.mean(m)?, v.mean(m)?)))
        .collect();
    if pairs.len() < min_overlap.max(1) {
        return None;
    }
    let n = pairs.len() as f64;
    let (mx, my) = pairs
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Some(0.0);
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Similarity-weighted mean of the neighbors' estimates for `model`. Only
/// neighbors with positive similarity and data on the model contribute.
/// Returns `None` when nobody contributes, or when `user` already has its own
/// measurements of the model.
pub fn predict_fit(
    user: &UserProfile,
    model: ModelId,
    neighbors: &[(&UserProfile, f64)],
) -> Option<f64> {
    if user.estimates.get(&model).is_some_and(FitEstimate::has_data) {
        return None;
    }
    let (num, den) = neighbors
        .iter()
        .filter(|(_, s)| *s > 0.0)
        .filter_map(|(n, s)| Some((s * n.mean(model)?, *s)))
        .fold((0.0, 0.0), |(a, b), (x, w)| (a + x, b + w));
    (den > 0.0).then(|| (num / den).clamp(0.0, 1.0))
}

/// The `k` most similar other users with positive similarity, most similar
/// first, ties by user id.
pub fn nearest_neighbors<'a>(
    user: &UserProfile,
    others: &'a [UserProfile],
    min_overlap: usize,
    k: usize,
) -> Vec<(&'a UserProfile, f64)> {
    let mut scored: Vec<(&UserProfile, f64)> = others
        .iter()
        .filter(|o| o.user_id != user.user_id)
        .filter_map(|o| Some((o, similarity(user, o, min_overlap)?)))
        .filter(|(_, s)| *s > 0.0)
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.user_id.cmp(&b.0.user_id)));
    scored.truncate(k);
    scored
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CooperationParams {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_min_overlap")]
    pub min_overlap: usize,
    #[serde(default = "default_neighbors")]
    pub neighbors: usize,
}

fn default_min_overlap() -> usize {
    2
}

fn default_neighbors() -> usize {
    3
}

impl Default for CooperationParams {
    fn default() -> Self {
        CooperationParams {
            enabled: false,
            min_overlap: default_min_overlap(),
            neighbors: default_neighbors(),
        }
    }
}

/// Models a user holds back at the start of an episode. The first
/// `min_overlap` models form a probe set everyone samples so similarities can
/// be measured; the remaining models are split round-robin across users and
/// each user starts only on its own share.
pub fn initial_deferral(
    models: &[ModelId],
    user: UserId,
    users: usize,
    min_overlap: usize,
) -> Vec<ModelId> {
    if users < 2 || models.len() <= min_overlap {
        return Vec::new();
    }
    models
        .iter()
        .enumerate()
        .skip(min_overlap)
        .filter(|(i, _)| (i - min_overlap) % users != user.index())
        .map(|(_, &m)| m)
        .collect()
}

/// Deferred models that should join exploration now. A model with no
/// prediction joins immediately; a predicted model joins once its prediction
/// reaches the current leader's lower confidence bound.
pub fn models_to_activate(
    state: &PolicyState,
    predictions: &BTreeMap<ModelId, Option<f64>>,
    delta: f64,
) -> Vec<ModelId> {
    let leader_lcb = state
        .select_best()
        .ok()
        .and_then(|m| bounds(&state.estimates()[&m], delta).ok())
        .map(|b| b.lcb);
    state
        .deferred()
        .iter()
        .copied()
        .filter(|m| match predictions.get(m).copied().flatten() {
            None => true,
            Some(p) => leader_lcb.is_none_or(|lcb| p >= lcb),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{Limits, PolicyKind};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn profile(user: u32, counts: &[(u64, u64)]) -> UserProfile {
        UserProfile::new(
            UserId(user),
            counts
                .iter()
                .enumerate()
                .map(|(i, &(s, t))| (ModelId::from(i), FitEstimate::new(s, t).unwrap()))
                .collect(),
        )
    }

    #[test]
    fn self_similarity_is_one() {
        let u = profile(0, &[(9, 10), (5, 10), (1, 10)]);
        assert_relative_eq!(similarity(&u, &u, 2).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn overlap_guard() {
        let u = profile(0, &[(9, 10), (0, 0)]);
        let v = profile(1, &[(8, 10), (4, 10)]);
        assert_eq!(similarity(&u, &v, 2), None);
    }

    #[test]
    fn perfect_linear_relation() {
        let u = profile(0, &[(9, 10), (5, 10), (1, 10)]);
        let v = profile(1, &[(8, 10), (4, 10), (0, 10)]);
        assert_relative_eq!(similarity(&u, &v, 2).unwrap(), 1.0, max_relative = 1e-12);
        let flat = profile(2, &[(5, 10), (5, 10), (5, 10)]);
        assert_eq!(similarity(&u, &flat, 2), Some(0.0));
    }

    #[test]
    fn prediction_examples() {
        let me = profile(0, &[(0, 0)]);
        let n1 = profile(1, &[(8, 10)]);
        assert_relative_eq!(predict_fit(&me, ModelId(0), &[(&n1, 1.0)]).unwrap(), 0.8);
        assert_eq!(predict_fit(&me, ModelId(0), &[(&n1, 0.0)]), None);
        assert_eq!(predict_fit(&me, ModelId(0), &[(&n1, -0.5)]), None);
        let a = profile(1, &[(9, 10)]);
        let b = profile(2, &[(6, 10)]);
        let p = predict_fit(&me, ModelId(0), &[(&a, 0.5), (&b, 0.25)]).unwrap();
        assert_relative_eq!(p, 0.8, max_relative = 1e-12);
        let measured = profile(0, &[(3, 4)]);
        assert_eq!(predict_fit(&measured, ModelId(0), &[(&a, 1.0)]), None);
    }

    #[test]
    fn neighbors_ranked_by_similarity() {
        let me = profile(0, &[(9, 10), (5, 10), (1, 10)]);
        let close = profile(1, &[(8, 10), (4, 10), (0, 10)]);
        let anti = profile(2, &[(1, 10), (5, 10), (9, 10)]);
        let others = vec![anti, close.clone(), me.clone()];
        let found = nearest_neighbors(&me, &others, 2, 3);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].0.user_id, UserId(1));
    }

    #[test]
    fn deferral_shares_models_round_robin() {
        let models: Vec<ModelId> = (0..5).map(ModelId::from).collect();
        assert_eq!(
            initial_deferral(&models, UserId(0), 2, 2),
            vec![ModelId(3)]
        );
        assert_eq!(
            initial_deferral(&models, UserId(1), 2, 2),
            vec![ModelId(2), ModelId(4)]
        );
        assert!(initial_deferral(&models, UserId(0), 1, 2).is_empty());
    }

    #[test]
    fn activation_rules() {
        let limits = Limits {
            max_rounds: 50,
            pilot_budget: None,
            fixed_rounds: 5,
        };
        let base = PolicyState::with_estimates(
            PolicyKind::BatchedElimination,
            [(0, (400, 500)), (1, (300, 500)), (2, (0, 0)), (3, (0, 0))]
                .into_iter()
                .map(|(m, (s, t))| (ModelId(m), FitEstimate::new(s, t).unwrap()))
                .collect(),
            limits,
        )
        .unwrap()
        .defer(&[ModelId(2), ModelId(3)])
        .unwrap();
        let preds: BTreeMap<_, _> = [(ModelId(2), Some(0.2)), (ModelId(3), None)].into();
        assert_eq!(models_to_activate(&base, &preds, 0.01), vec![ModelId(3)]);
        let preds: BTreeMap<_, _> = [(ModelId(2), Some(0.79)), (ModelId(3), Some(0.1))].into();
        assert_eq!(models_to_activate(&base, &preds, 0.01), vec![ModelId(2)]);

        let (lonely, _) = base.eliminate(0.01).unwrap();
        assert_eq!(lonely.survivors().len(), 1);
        let preds: BTreeMap<_, _> = [(ModelId(2), Some(0.2)), (ModelId(3), Some(0.3))].into();
        assert!(models_to_activate(&lonely, &preds, 0.01).is_empty());
        let (done, dropped) = lonely.drop_deferred();
        assert_eq!(dropped, vec![ModelId(2), ModelId(3)]);
        assert!(done.is_terminal());
    }

    proptest! {
        #[test]
        fn similarity_is_symmetric(
            a in prop::collection::vec((0u64..=20, 1u64..=20), 2..6),
            b in prop::collection::vec((0u64..=20, 1u64..=20), 2..6),
        ) {
            let fix = |v: Vec<(u64, u64)>| v.into_iter().map(|(s, t)| (s.min(t), t)).collect::<Vec<_>>();
            let u = profile(0, &fix(a));
            let v = profile(1, &fix(b));
            let uv = similarity(&u, &v, 2);
            let vu = similarity(&v, &u, 2);
            prop_assert_eq!(uv.is_some(), vu.is_some());
            if let (Some(x), Some(y)) = (uv, vu) {
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&x));
            }
        }

        #[test]
        fn prediction_within_neighbor_range(
            neighbors in prop::collection::vec((0u64..=50, 1u64..=50, -1.0f64..1.0), 1..6),
        ) {
            let me = profile(0, &[(0, 0)]);
            let profiles: Vec<(UserProfile, f64)> = neighbors
                .iter()
                .enumerate()
                .map(|(i, &(s, t, sim))| (profile(i as u32 + 1, &[(s.min(t), t)]), sim))
                .collect();
            let refs: Vec<(&UserProfile, f64)> = profiles.iter().map(|(p, s)| (p, *s)).collect();
            let contributing: Vec<f64> = profiles
                .iter()
                .filter(|(_, s)| *s > 0.0)
                .map(|(p, _)| p.mean(ModelId(0)).unwrap())
                .collect();
            match predict_fit(&me, ModelId(0), &refs) {
                None => prop_assert!(contributing.is_empty()),
                Some(p) => {
                    let lo = contributing.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = contributing.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
                }
            }
        }
    }
}
