//! Simulation of fit-probability learning for AI model selection at the
//! wireless edge.
//!
//! Edge users probe the models hosted on nearby servers with annotated pilot
//! data, estimate each model's fit probability, eliminate models whose upper
//! confidence bound falls below the leader's lower bound, and offload their
//! tasks to the winner. Every pilot costs uplink energy that grows
//! super-linearly with the payload, which couples how confidently a model is
//! identified with how much energy identifying it takes.

pub mod config;
pub mod cooperation;
pub mod environment;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod ids;
pub mod policy;
pub mod radio;
pub mod simulator;

pub use config::{EpisodeConfig, Scenario};
pub use error::{Error, Result};
pub use ids::{ModelId, ServerId, UserId};
pub use simulator::{run_episode, run_experiment, EpisodeMetrics, MetricsTable};
