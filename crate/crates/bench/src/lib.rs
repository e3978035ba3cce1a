//! Benchmark fixtures shared by the criterion benches.

pub use fleetsched::{AgentModel, DeteriorationKernel, PartitionSpec, PolicyParams, ScenarioConfig, WeibullParams};

use fleetsched::agent_kernel::TtaMode;
use fleetsched::experiment::{generate_scenario, ExperimentError};

/// `n` agents drawn from the default parameter ranges with exact TTA.
pub fn fleet(n: usize, seed: u64) -> Result<Vec<AgentModel>, ExperimentError> {
    let cfg = ScenarioConfig {
        n,
        r: 1,
        seed,
        tta_runs: 1,
        ..ScenarioConfig::default()
    };
    generate_scenario(&cfg)?
        .into_iter()
        .map(|a| Ok(AgentModel::new(a.id, a.params, TtaMode::Exact, seed)?))
        .collect()
}
