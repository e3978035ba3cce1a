//! `fleetsched` command-line driver: scenario generation, partitioning,
//! training, evaluation, sweeps, timing and concentration studies. Every
//! subcommand writes CSV rows plus a JSON summary into `--out`.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use fleetsched::agent_kernel::save_agent_table;
use fleetsched::concentration::{gap_experiment, ConcentrationRow, PartitionScope};
use fleetsched::experiment::{
    budget_sweep, generate_scenario, lsap_partition, partition_quality_report, run_method, scaling_study, train_meta,
    train_meta_for_sizes, write_csv, write_json, Pretrained,
};
use fleetsched::partition::{
    build_partition_pair_rr, distance_matrix, diversity_score, random_partition, save_partition,
};
use fleetsched::ppo::stream_rng;
use fleetsched::{ExperimentError, PolicyParams, ScenarioConfig};
use serde::Serialize;
use thiserror::Error;

use crate::config::{load_config, Overrides};

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("{0}")]
    Invalid(String),
}

impl From<fleetsched::nn::NnError> for CliError {
    fn from(e: fleetsched::nn::NnError) -> Self {
        CliError::Invalid(format!("checkpoint: {e}"))
    }
}

impl From<fleetsched::partition::PartitionError> for CliError {
    fn from(e: fleetsched::partition::PartitionError) -> Self {
        CliError::Experiment(e.into())
    }
}

impl From<fleetsched::agent_kernel::ModelError> for CliError {
    fn from(e: fleetsched::agent_kernel::ModelError) -> Self {
        CliError::Experiment(e.into())
    }
}

impl From<fleetsched::concentration::ConcentrationError> for CliError {
    fn from(e: fleetsched::concentration::ConcentrationError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "fleetsched", version, about = "Budget- and capacity-constrained fleet repair scheduling")]
struct Cli {
    /// TOML scenario file; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV and JSON files.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PartitionKind {
    Lsap,
    PairRr,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Scope {
    Fixed,
    Exhaustive,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample agents and their TTA features.
    Generate,
    /// Group agents and split the budget.
    Partition {
        #[arg(long, value_enum, default_value = "lsap")]
        kind: PartitionKind,
    },
    /// Meta-train the shared group policy and save a checkpoint.
    Train {
        /// Checkpoint path (default: <out>/meta.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the configured method and evaluate it.
    Evaluate {
        /// Reuse a trained meta-policy instead of training one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the configured method at several total budgets.
    SweepBudget {
        /// Total budgets, e.g. `250,500,750`.
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<u32>>,
        /// Budgets as multiples of n, used when --budgets is absent.
        #[arg(long, value_delimiter = ',', default_value = "5,10,15,20")]
        multiples: Vec<u32>,
    },
    /// Inference-only pipeline timing across fleet sizes.
    Scale {
        /// Sizes as `n:r`, e.g. `10:3,50:15`.
        #[arg(long, value_delimiter = ',', default_value = "10:3,50:15,100:30,500:150")]
        sizes: Vec<String>,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        /// Meta-policy to time; trained on the base scenario when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Diversity of LSAP and random partitions over many seeds.
    PartitionQuality {
        #[arg(long, value_delimiter = ',', default_value = "10:3,50:15,100:30")]
        sizes: Vec<String>,
        #[arg(long, default_value_t = 50)]
        seeds: usize,
    },
    /// Empirical group-average gaps against the analytic bound.
    Concentration {
        #[arg(long = "groups", value_delimiter = ',', default_value = "2,5,10")]
        groups: Vec<usize>,
        #[arg(long = "group-size", value_delimiter = ',', default_value = "5,10,20,40")]
        group_sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,2")]
        epsilons: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, value_enum, default_value = "fixed")]
        scope: Scope,
    },
}

fn parse_sizes(sizes: &[String]) -> Result<Vec<(usize, usize)>> {
    sizes
        .iter()
        .map(|s| {
            let (n, r) = s
                .split_once(':')
                .ok_or_else(|| CliError::Invalid(format!("size {s:?} is not n:r")))?;
            let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| CliError::Invalid(format!("size {s:?}: {e}")));
            Ok((parse(n)?, parse(r)?))
        })
        .collect()
}

#[derive(Serialize)]
struct AgentRow {
    id: usize,
    shape: f64,
    scale: f64,
    tta_mean: f64,
    tta_variance: f64,
}

#[derive(Serialize)]
struct GroupRow {
    agent: usize,
    group: usize,
    group_budget: u32,
    pair_score: Option<f64>,
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    command: &'a str,
    config: &'a ScenarioConfig,
    seconds: f64,
    result: T,
}

fn finish<T: Serialize>(out: &Path, command: &str, cfg: &ScenarioConfig, start: Instant, result: T) -> Result<()> {
    let summary = Summary {
        command,
        config: cfg,
        seconds: start.elapsed().as_secs_f64(),
        result,
    };
    let path = out.join(format!("{command}.json"));
    write_json(&path, &summary)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref(), &cli.overrides)?;
    cfg.validate()?;
    let out = cli.out.as_path();
    let start = Instant::now();
    match cli.command {
        Command::Generate => {
            let agents = generate_scenario(&cfg)?;
            let rows: Vec<AgentRow> = agents
                .iter()
                .map(|a| AgentRow {
                    id: a.id,
                    shape: a.params.shape,
                    scale: a.params.scale,
                    tta_mean: a.tta.mean,
                    tta_variance: a.tta.variance,
                })
                .collect();
            write_csv(&out.join("agents.csv"), &rows)?;
            save_agent_table(&out.join("agents.json"), &agents)?;
            let means: Vec<f64> = rows.iter().map(|r| r.tta_mean).collect();
            let (mean, std) = fleetsched::experiment::mean_std(&means);
            finish(out, "generate", &cfg, start, payload::TtaSummary { agents: rows.len(), tta_mean: mean, tta_std: std })
        }
        Command::Partition { kind } => {
            let agents = generate_scenario(&cfg)?;
            let stats: Vec<_> = agents.iter().map(|a| a.tta).collect();
            let d = distance_matrix(&stats);
            let budget = cfg.total_budget();
            let spec = match kind {
                PartitionKind::Lsap => lsap_partition(&agents, cfg.r, budget, cfg.seed)?,
                PartitionKind::PairRr => build_partition_pair_rr(&d, cfg.r, budget, &mut stream_rng(cfg.seed, 1))?,
                PartitionKind::Random => random_partition(cfg.n, cfg.r, budget, &mut stream_rng(cfg.seed, 1))?,
            };
            let mut rows = Vec::with_capacity(cfg.n);
            for (q, members) in spec.groups.iter().enumerate() {
                for &agent in members {
                    rows.push(GroupRow {
                        agent,
                        group: q,
                        group_budget: spec.budgets[q],
                        pair_score: spec.pair_scores.get(agent).copied(),
                    });
                }
            }
            write_csv(&out.join("groups.csv"), &rows)?;
            save_partition(&out.join("partition_spec.json"), &spec)?;
            let diversity = diversity_score(&spec, &d);
            finish(
                out,
                "partition",
                &cfg,
                start,
                payload::PartitionSummary {
                    groups: spec.num_groups(),
                    sizes: spec.groups.iter().map(Vec::len).collect(),
                    budgets: spec.budgets.clone(),
                    diversity,
                },
            )
        }
        Command::Train { checkpoint } => {
            let agents = generate_scenario(&cfg)?;
            let spec = lsap_partition(&agents, cfg.r, cfg.total_budget(), cfg.seed)?;
            let (params, history) = train_meta(&cfg, &agents, &spec)?;
            let path = checkpoint.unwrap_or_else(|| out.join("meta.json"));
            write_csv(&out.join("training.csv"), &history)?;
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(ExperimentError::from)?;
            }
            params.save(&path)?;
            let last = history.last().cloned();
            finish(
                out,
                "train",
                &cfg,
                start,
                payload::TrainSummary {
                    checkpoint: path.display().to_string(),
                    iterations: history.len(),
                    final_iteration: last,
                },
            )
        }
        Command::Evaluate { checkpoint } => {
            let agents = generate_scenario(&cfg)?;
            let pretrained = Pretrained {
                meta: checkpoint.as_deref().map(PolicyParams::load).transpose()?,
            };
            let output = run_method(&cfg, &agents, &pretrained)?;
            write_csv(&out.join("episodes.csv"), &output.rows(&cfg))?;
            if !output.training.is_empty() {
                write_csv(&out.join("training.csv"), &output.training)?;
            }
            if let Some(spec) = &output.partition {
                save_partition(&out.join("partition_spec.json"), spec)?;
            }
            write_csv(&out.join("summary.csv"), std::slice::from_ref(&output.summary))?;
            println!(
                "{}: mean t_abs {:.2} (std {:.2}), mean repairs {:.2}",
                output.summary.method, output.summary.mean_t_abs, output.summary.std_t_abs, output.summary.mean_repairs
            );
            finish(out, "evaluate", &cfg, start, &output.summary)
        }
        Command::SweepBudget { budgets, multiples } => {
            let budgets = budgets.unwrap_or_else(|| multiples.iter().map(|m| m * cfg.n as u32).collect());
            let rows = budget_sweep(&cfg, &budgets)?;
            write_csv(&out.join("budget_sweep.csv"), &rows)?;
            finish(out, "sweep-budget", &cfg, start, &rows)
        }
        Command::Scale { sizes, repeats, checkpoint } => {
            let sizes = parse_sizes(&sizes)?;
            let meta = match checkpoint {
                Some(p) => PolicyParams::load(&p)?,
                None => train_meta_for_sizes(&cfg, &sizes)?,
            };
            let report = scaling_study(&cfg, &sizes, &meta, repeats)?;
            write_csv(&out.join("scaling.csv"), &report.rows)?;
            finish(out, "scale", &cfg, start, &report)
        }
        Command::PartitionQuality { sizes, seeds } => {
            let sizes = parse_sizes(&sizes)?;
            let rows = partition_quality_report(&cfg, &sizes, seeds)?;
            write_csv(&out.join("partition_quality.csv"), &rows)?;
            finish(out, "partition-quality", &cfg, start, &rows)
        }
        Command::Concentration {
            groups,
            group_sizes,
            epsilons,
            trials,
            scope,
        } => {
            let scope = match scope {
                Scope::Fixed => PartitionScope::Fixed,
                Scope::Exhaustive => PartitionScope::Exhaustive,
            };
            let mut rows = Vec::new();
            let mut cell = 0u64;
            for &n in &groups {
                for &k in &group_sizes {
                    for &eps in &epsilons {
                        let res = gap_experiment(n, k, eps, trials, cfg.seed.wrapping_add(cell), scope)?;
                        rows.push(ConcentrationRow::from(&res));
                        cell += 1;
                    }
                }
            }
            write_csv(&out.join("concentration.csv"), &rows)?;
            finish(out, "concentration", &cfg, start, &rows)
        }
    }
}

/// Small JSON payloads for subcommands without a core result type.
mod payload {
    use fleetsched::ppo::IterationStats;
    use serde::Serialize;

    #[derive(Serialize)]
    pub struct TtaSummary {
        pub agents: usize,
        pub tta_mean: f64,
        pub tta_std: f64,
    }

    #[derive(Serialize)]
    pub struct PartitionSummary {
        pub groups: usize,
        pub sizes: Vec<usize>,
        pub budgets: Vec<u32>,
        pub diversity: f64,
    }

    #[derive(Serialize)]
    pub struct TrainSummary {
        pub checkpoint: String,
        pub iterations: usize,
        pub final_iteration: Option<IterationStats>,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
