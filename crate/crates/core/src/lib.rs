//! Planning restorative actions for fleets of independently deteriorating
//! agents under a total repair budget and a per-step repair capacity.

pub mod agent_kernel;
pub mod baselines;
pub mod concentration;
pub mod env;
pub mod experiment;
pub mod lsap;
pub mod nn;
pub mod partition;
pub mod ppo;

pub use agent_kernel::{AgentModel, DeteriorationKernel, TtaStats, WeibullParams};
pub use env::{EpisodeRecord, FleetState, RewardConfig};
pub use experiment::{ExperimentError, Method, RunSummary, ScenarioConfig};
pub use nn::PolicyParams;
pub use partition::PartitionSpec;
pub use ppo::PpoConfig;
