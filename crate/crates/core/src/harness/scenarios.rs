//! Scenarios compiled into the binary. The TOML sources live in
//! `crates/core/scenarios/` and double as example configuration files.

use crate::config::EpisodeConfig;
use crate::error::{Error, Result};

pub struct BuiltIn {
    pub name: &'static str,
    pub summary: &'static str,
    pub source: &'static str,
}

pub const BUILT_INS: &[BuiltIn] = &[
    BuiltIn {
        name: "four-detectors",
        summary: "four detectors, three contexts, sticky context chain",
        source: include_str!("../../scenarios/four-detectors.toml"),
    },
    BuiltIn {
        name: "daytime",
        summary: "daytime detectors 0.80 / 0.70 / 0.25, fixed daytime context",
        source: include_str!("../../scenarios/daytime.toml"),
    },
    BuiltIn {
        name: "daytime-5arm",
        summary: "daytime detectors plus distractors 0.95 / 0.90",
        source: include_str!("../../scenarios/daytime-5arm.toml"),
    },
    BuiltIn {
        name: "two-server",
        summary: "strong and weak server; weak server hosts only an inferior model",
        source: include_str!("../../scenarios/two-server.toml"),
    },
    BuiltIn {
        name: "two-user-coop",
        summary: "two users with identical preferences, cooperation enabled",
        source: include_str!("../../scenarios/two-user-coop.toml"),
    },
];

pub fn names() -> impl Iterator<Item = &'static str> {
    BUILT_INS.iter().map(|b| b.name)
}

pub fn source(name: &str) -> Result<&'static str> {
    BUILT_INS
        .iter()
        .find(|b| b.name == name)
        .map(|b| b.source)
        .ok_or_else(|| {
            Error::config(format!(
                "unknown scenario `{name}`; available: {}",
                names().collect::<Vec<_>>().join(", ")
            ))
        })
}

pub fn load(name: &str) -> Result<EpisodeConfig> {
    super::parse_config(source(name)?)
}
