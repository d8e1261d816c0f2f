use std::collections::BTreeSet;

use modnet::config::TransmissionMode;
use modnet::harness::{parse_config, scenarios};
use modnet::ids::{ModelId, ServerId};
use modnet::policy::PolicyKind;
use modnet::radio::{broadcast_rate, RadioParams};
use modnet::simulator::{run_episode, LinkMode};
use modnet::{run_experiment, EpisodeConfig};

fn scenario(name: &str) -> EpisodeConfig {
    scenarios::load(name).unwrap()
}

#[test]
fn same_seed_same_episode() {
    for name in scenarios::names() {
        let config = scenario(name);
        let a = run_episode(&config).unwrap();
        let b = run_episode(&config).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn experiment_rows_match_single_episodes() {
    let config = scenario("daytime");
    let seeds = [9, 2, 7];
    let table = run_experiment(&config, &seeds).unwrap();
    for (row, &seed) in table.rows.iter().zip(&seeds) {
        let single = run_episode(&EpisodeConfig { seed, ..config.clone() }).unwrap();
        assert_eq!(row, &single);
    }
    let picks = table.rows.iter().filter(|r| r.all_identified()).count();
    assert_eq!(table.aggregates.identification_rate, picks as f64 / 3.0);
}

#[test]
fn time_and_energy_accounting() {
    for name in scenarios::names() {
        let config = scenario(name);
        let radio = config.radio.params();
        for seed in 0..20 {
            let m = run_episode(&EpisodeConfig { seed, ..config.clone() }).unwrap();
            for (u, &energy) in m.energy_joules.iter().enumerate() {
                let rounds: Vec<_> = m.rounds.iter().filter(|r| r.user.index() == u).collect();
                let spent: f64 = rounds
                    .iter()
                    .map(|r| r.duration_s + radio.feedback_time_s)
                    .sum();
                assert!(spent <= radio.time_budget_s * (1.0 + 1e-12), "{name}: {spent}");
                let charged: f64 = rounds.iter().map(|r| r.energy_joules).sum();
                assert_eq!(energy, charged, "{name} seed {seed}");
                let pilots: f64 = rounds.iter().map(|r| r.bits / radio.pilot_bits).sum();
                assert_eq!(pilots.round() as u64, m.pilots_sent[u]);
            }
        }
    }
}

#[test]
fn candidate_pool_only_shrinks() {
    for name in ["daytime-5arm", "two-user-coop", "four-detectors"] {
        let config = scenario(name);
        for seed in 0..20 {
            let m = run_episode(&EpisodeConfig { seed, ..config.clone() }).unwrap();
            for u in 0..config.users {
                let mut seen: Option<BTreeSet<ModelId>> = None;
                for r in m.rounds.iter().filter(|r| r.user.0 == u) {
                    let now: BTreeSet<ModelId> = r.survivors.iter().copied().collect();
                    if !config.cooperation.enabled {
                        if let Some(prev) = &seen {
                            assert!(now.is_subset(prev), "{name} seed {seed}");
                        }
                    }
                    seen = Some(now);
                }
                let rounds: Vec<u32> = m
                    .elimination_timeline
                    .iter()
                    .filter(|e| e.user.0 == u)
                    .map(|e| e.round)
                    .collect();
                assert!(rounds.windows(2).all(|w| w[0] <= w[1]), "{name}: {rounds:?}");
                let dropped: BTreeSet<_> = m
                    .elimination_timeline
                    .iter()
                    .filter(|e| e.user.0 == u)
                    .map(|e| e.model)
                    .collect();
                assert!(!dropped.contains(&m.chosen_model[u as usize]));
            }
        }
    }
}

#[test]
fn single_model_needs_no_elimination() {
    let text = r#"
[[scenario.models]]
name = "only"
fit = { general = 0.6, daytime = 0.6, nighttime = 0.6 }
"#;
    let base = parse_config(text).unwrap();
    for kind in PolicyKind::ALL {
        let mut config = base.clone();
        config.policy.kind = kind;
        let m = run_episode(&config).unwrap();
        assert_eq!(m.chosen_model, vec![ModelId(0)]);
        assert!(m.elimination_timeline.is_empty());
        assert!(m.identified_best[0]);
    }
}

#[test]
fn adaptive_mode_drops_weak_server() {
    let config = scenario("two-server");
    let radio = config.radio.params();
    let weak_model = ModelId(2);
    let mut checked = 0;
    for seed in 0..50 {
        let m = run_episode(&EpisodeConfig { seed, ..config.clone() }).unwrap();
        let Some(gone) = m
            .elimination_timeline
            .iter()
            .find(|e| e.model == weak_model)
            .map(|e| e.round)
        else {
            continue;
        };
        for r in &m.rounds {
            if r.round <= gone {
                assert_eq!(r.transmission.mode, LinkMode::Broadcast);
            } else {
                assert_eq!(r.transmission.mode, LinkMode::Unicast);
                assert_eq!(r.transmission.servers, vec![ServerId(0)]);
                let single = broadcast_rate(&[r.transmission.min_gain], radio.tx_power_w, &radio).unwrap();
                assert_eq!(r.transmission.rate_bps, single);
                checked += 1;
            }
        }
    }
    assert!(checked > 0);

    let persistent = EpisodeConfig {
        mode: TransmissionMode::Broadcast,
        ..config
    };
    let m = run_episode(&persistent).unwrap();
    assert!(m
        .rounds
        .iter()
        .all(|r| r.transmission.servers == vec![ServerId(0), ServerId(1)]));
}

#[test]
fn dropping_a_server_never_lowers_rate() {
    let params = RadioParams::default();
    let all = broadcast_rate(&[1.3, 0.2, 0.7], params.tx_power_w, &params).unwrap();
    let fewer = broadcast_rate(&[1.3, 0.7], params.tx_power_w, &params).unwrap();
    assert!(fewer >= all);
}

#[test]
fn infeasible_budget_is_reported() {
    let mut config = scenario("daytime");
    config.radio.feedback_time_s = 0.1;
    let err = run_episode(&config).unwrap_err();
    assert_eq!(err.exit_code(), 4, "{err}");
}

#[test]
fn cooperation_prunes_poorly_predicted_models() {
    let config = scenario("two-user-coop");
    let mut isolated = config.clone();
    isolated.cooperation.enabled = false;
    let mut saved = 0;
    for seed in 0..20 {
        let with = run_episode(&EpisodeConfig { seed, ..config.clone() }).unwrap();
        let without = run_episode(&EpisodeConfig { seed, ..isolated.clone() }).unwrap();
        assert_eq!(with.pilots_sent[0], without.pilots_sent[0]);
        assert!(with.pilots_sent[1] <= without.pilots_sent[1]);
        saved += without.pilots_sent[1] - with.pilots_sent[1];
    }
    assert!(saved > 0);
}

#[test]
fn training_promotes_improved_shadow() {
    let text = r#"
[scenario]
initial_context = "nighttime"
stay_probability = 1.0

[scenario.training]
enabled = true

[[scenario.models]]
name = "stale"
fit = { general = 0.5, daytime = 0.5, nighttime = 0.5 }
training_target = { general = 0.9, daytime = 0.9, nighttime = 0.9 }

[[scenario.models]]
name = "fixed"
fit = { general = 0.6, daytime = 0.6, nighttime = 0.6 }
"#;
    let config = parse_config(text).unwrap();
    let m = run_episode(&config).unwrap();
    assert_eq!(m.promotions, 1);
    assert!(m.task_accuracy[0] >= 0.0 && m.task_accuracy[0] <= 1.0);
}
