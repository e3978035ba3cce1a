//! Scenario configuration: TOML file, then environment, then flags.

use std::path::{Path, PathBuf};

use clap::Args;
use fleetsched::{Method, ScenarioConfig};
use thiserror::Error;

/// Environment variable that overrides the seed from the config file.
pub const SEED_ENV: &str = "FLEETSCHED_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
}

/// Flags that override individual config fields.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// Number of agents.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Repair capacity per step (also the number of groups).
    #[arg(long, global = true)]
    pub r: Option<usize>,
    /// Total repair budget (default 10 n).
    #[arg(long, global = true)]
    pub budget: Option<u32>,
    #[arg(long, global = true)]
    pub horizon: Option<usize>,
    /// Global seed; the environment variable is used when the flag is absent.
    #[arg(long, global = true, env = SEED_ENV)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub method: Option<Method>,
    #[arg(long, global = true)]
    pub episodes: Option<usize>,
    /// Coarse CI grid step (must divide 100); required by exact_dp.
    #[arg(long, global = true)]
    pub ci_grid: Option<usize>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub r1: Option<f64>,
    #[arg(long, global = true)]
    pub meta_iterations: Option<usize>,
    #[arg(long, global = true)]
    pub finetune_steps: Option<usize>,
    #[arg(long, global = true)]
    pub tta_runs: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field { $target = v; })*
            };
        }
        set!(
            n => cfg.n,
            r => cfg.r,
            horizon => cfg.horizon,
            seed => cfg.seed,
            method => cfg.method,
            episodes => cfg.eval_episodes,
            alpha => cfg.alpha,
            r1 => cfg.r1,
            meta_iterations => cfg.ppo.meta_iterations,
            finetune_steps => cfg.ppo.finetune_steps,
            tta_runs => cfg.tta_runs,
        );
        if self.budget.is_some() {
            cfg.budget = self.budget;
        }
        if self.ci_grid.is_some() {
            cfg.ci_grid = self.ci_grid;
        }
    }
}

pub fn parse_config(text: &str, path: &Path) -> Result<ScenarioConfig, ConfigError> {
    toml::from_str(text).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

/// Defaults, overlaid by the TOML file (if any), then by the overrides.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.to_path_buf(),
                source,
            })?;
            parse_config(&text, p)?
        }
        None => ScenarioConfig::default(),
    };
    overrides.apply(&mut cfg);
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_and_nested_tables() {
        let cfg = parse_config(
            "n = 20\nr = 4\nmethod = \"auction\"\n[ppo]\nmeta_iterations = 7\n",
            Path::new("x.toml"),
        )
        .unwrap();
        assert_eq!((cfg.n, cfg.r, cfg.method), (20, 4, Method::Auction));
        assert_eq!(cfg.ppo.meta_iterations, 7);
        assert_eq!(cfg.horizon, 100);
    }

    #[test]
    fn flags_override_file() {
        let mut cfg = parse_config("n = 20\nseed = 1\n", Path::new("x.toml")).unwrap();
        let o = Overrides {
            n: Some(30),
            seed: Some(9),
            budget: Some(12),
            ..Overrides::default()
        };
        o.apply(&mut cfg);
        assert_eq!((cfg.n, cfg.seed, cfg.budget), (30, 9, Some(12)));
    }

    #[test]
    fn unknown_method_is_rejected() {
        assert!(parse_config("method = \"magic\"\n", Path::new("x.toml")).is_err());
    }
}
