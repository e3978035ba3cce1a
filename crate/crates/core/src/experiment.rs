//! Scenario generation and end-to-end experiment drivers: the partition,
//! meta-train, fine-tune and compose pipeline, baseline runs, budget sweeps,
//! timing studies and partition-quality reports.

use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent_kernel::{AgentModel, ModelError, TtaMode, WeibullParams, CI_MAX};
use crate::baselines::{
    exact_dp_value, vanilla_ppo_train, AuctionPolicy, AuctionWeights, BaselineError, DpPolicy, FleetTask, GaConfig,
    GaPolicy, VanillaPpoPolicy,
};
use crate::env::{EnvError, EpisodeRecord, FleetEnv, FleetPolicy, KernelRef, NoopPolicy, RewardConfig};
use crate::nn::PolicyParams;
use crate::partition::{
    build_partition, build_partition_pair_rr, distance_matrix, diversity_score, random_partition, PartitionError,
    PartitionSpec,
};
use crate::ppo::{
    compose, finetune, init_params, meta_train, stream_rng, ActionSelection, GroupTask, IterationStats, PoolSampler,
    PpoConfig, TrainError,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("method {method} cannot run this scenario: {reason}")]
    Infeasible { method: Method, reason: String },
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// Planner under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// LSAP partition, meta-PPO, per-group fine-tuning, composition.
    #[default]
    LsapMetaPpo,
    /// Random partition with the same meta-PPO workflow.
    RpPpo,
    VanillaPpo,
    Ga,
    Auction,
    ExactDp,
    Noop,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::LsapMetaPpo,
        Method::RpPpo,
        Method::VanillaPpo,
        Method::Ga,
        Method::Auction,
        Method::ExactDp,
        Method::Noop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::LsapMetaPpo => "lsap_meta_ppo",
            Method::RpPpo => "rp_ppo",
            Method::VanillaPpo => "vanilla_ppo",
            Method::Ga => "ga",
            Method::Auction => "auction",
            Method::ExactDp => "exact_dp",
            Method::Noop => "noop",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| ExperimentError::InvalidConfig(format!("unknown method {s:?}")))
    }
}

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub n: usize,
    pub r: usize,
    /// Total repair budget; `10 n` when absent.
    pub budget: Option<u32>,
    pub horizon: usize,
    pub shape_range: [f64; 2],
    pub scale_range: [f64; 2],
    pub seed: u64,
    pub method: Method,
    pub eval_episodes: usize,
    /// Monte-Carlo runs per agent for the TTA features.
    pub tta_runs: usize,
    /// Restrict every kernel to the CI grid `0, g, 2g, ..., 100`.
    pub ci_grid: Option<usize>,
    pub r1: f64,
    pub alpha: f64,
    /// Meta-training budgets are the proportional share times a factor
    /// drawn uniformly from this range.
    pub budget_factor: [f64; 2],
    pub ppo: PpoConfig,
    pub ga: GaConfig,
    pub auction: AuctionWeights,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let reward = RewardConfig::default();
        Self {
            n: 10,
            r: 3,
            budget: None,
            horizon: reward.horizon,
            shape_range: [1.0, 7.0],
            scale_range: [25.0, 70.0],
            seed: 0,
            method: Method::default(),
            eval_episodes: 100,
            tta_runs: 1000,
            ci_grid: None,
            r1: reward.r1,
            alpha: reward.alpha,
            budget_factor: [0.5, 1.5],
            ppo: PpoConfig::default(),
            ga: GaConfig::default(),
            auction: AuctionWeights::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn total_budget(&self) -> u32 {
        self.budget.unwrap_or(10 * self.n as u32)
    }

    pub fn reward(&self) -> RewardConfig {
        RewardConfig {
            r1: self.r1,
            alpha: self.alpha,
            horizon: self.horizon,
        }
    }

    /// PPO settings with this scenario's reward and a seed derived from it.
    pub fn ppo_config(&self) -> PpoConfig {
        PpoConfig {
            reward: self.reward(),
            seed: self.seed ^ 0x5eed_0000_0000_0001,
            ..self.ppo
        }
    }

    pub fn scenario_id(&self) -> String {
        format!("n{}_r{}_b{}_h{}_s{}", self.n, self.r, self.total_budget(), self.horizon, self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::InvalidConfig(m));
        if self.n == 0 || self.r == 0 || self.r > self.n {
            return bad(format!("need 1 <= r <= n, got n={} r={}", self.n, self.r));
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        let range_ok = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite();
        if !range_ok(self.shape_range) || !range_ok(self.scale_range) {
            return bad("shape and scale ranges must be positive and ordered".into());
        }
        if !(self.budget_factor[0] >= 0.0 && self.budget_factor[0] <= self.budget_factor[1]) {
            return bad("budget_factor must be ordered and non-negative".into());
        }
        if self.tta_runs == 0 {
            return bad("tta_runs must be at least 1".into());
        }
        if let Some(g) = self.ci_grid {
            if g == 0 || !CI_MAX.is_multiple_of(g) {
                return bad(format!("ci_grid {g} must divide {CI_MAX}"));
            }
        }
        self.reward().validate()?;
        Ok(())
    }
}

/// Sample `n` agents with Weibull parameters uniform over the configured
/// ranges and precompute kernels and TTA features. Deterministic per seed.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Vec<AgentModel>> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, 0);
    let draws: Vec<(f64, f64, u64)> = (0..cfg.n)
        .map(|_| {
            let shape = uniform(&mut rng, cfg.shape_range);
            let scale = uniform(&mut rng, cfg.scale_range);
            (shape, scale, rng.random())
        })
        .collect();
    draws
        .into_par_iter()
        .enumerate()
        .map(|(id, (shape, scale, seed))| {
            let params = WeibullParams::new(shape, scale)?;
            let mode = TtaMode::MonteCarlo { num_runs: cfg.tta_runs };
            let mut agent = AgentModel::new(id, params, mode, seed)?;
            if let Some(g) = cfg.ci_grid {
                let coarse = agent.kernel.coarsened(g)?;
                agent.tta = coarse.estimate_tta_mc(CI_MAX, cfg.tta_runs, seed)?;
                agent.kernel = Arc::new(coarse);
            }
            Ok(agent)
        })
        .collect()
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

pub fn kernels_of(agents: &[AgentModel]) -> Vec<KernelRef> {
    agents.iter().map(|a| a.kernel.clone()).collect()
}

/// LSAP partition of the agents' TTA features.
pub fn lsap_partition(agents: &[AgentModel], r: usize, budget: u32, seed: u64) -> Result<PartitionSpec> {
    let stats: Vec<_> = agents.iter().map(|a| a.tta).collect();
    let d = distance_matrix(&stats);
    Ok(build_partition(&d, r, budget, &mut stream_rng(seed, 1))?)
}

/// One evaluation episode as a CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub scenario_id: String,
    pub seed: u64,
    pub method: Method,
    pub budget: u32,
    pub episode: usize,
    pub t_abs: usize,
    pub repairs_used: u32,
    pub total_reward: f64,
    pub violated_budget: bool,
    pub violated_capacity: bool,
}

/// Aggregate of one method on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario_id: String,
    pub method: Method,
    pub n: usize,
    pub r: usize,
    pub budget: u32,
    pub horizon: usize,
    pub episodes: usize,
    pub mean_t_abs: f64,
    pub std_t_abs: f64,
    pub mean_repairs: f64,
    pub std_repairs: f64,
    pub budget_violations: usize,
    pub capacity_violations: usize,
    pub partition_seconds: f64,
    pub policy_seconds: f64,
    pub eval_seconds: f64,
}

/// Sample mean and (n - 1) standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Everything a pipeline run produces.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub summary: RunSummary,
    pub episodes: Vec<EpisodeRecord>,
    pub partition: Option<PartitionSpec>,
    pub training: Vec<IterationStats>,
    /// Meta-trained (or vanilla) network, when the method learns one.
    pub policy: Option<PolicyParams>,
}

impl PipelineOutput {
    pub fn rows(&self, cfg: &ScenarioConfig) -> Vec<EpisodeRow> {
        self.episodes
            .iter()
            .enumerate()
            .map(|(e, r)| EpisodeRow {
                scenario_id: cfg.scenario_id(),
                seed: cfg.seed,
                method: self.summary.method,
                budget: self.summary.budget,
                episode: e,
                t_abs: r.t_abs,
                repairs_used: r.repairs_used,
                total_reward: r.total_reward,
                violated_budget: r.violated_budget,
                violated_capacity: r.violated_capacity,
            })
            .collect()
    }
}

/// Run `episodes` seeded fleet episodes; episode `e` uses stream `e` of
/// `seed` for every method, so runs with the same seed are paired.
pub fn evaluate_fleet<P>(env: &FleetEnv, policy: &P, episodes: usize, seed: u64) -> Vec<EpisodeRecord>
where
    P: FleetPolicy + Clone + Send + Sync,
{
    (0..episodes)
        .into_par_iter()
        .map(|e| {
            let mut p = policy.clone();
            env.run_episode(&mut p, &mut stream_rng(seed, e as u64))
        })
        .collect()
}

/// Seed shared by every method's evaluation episodes for a scenario.
pub fn eval_seed(cfg: &ScenarioConfig) -> u64 {
    cfg.seed ^ 0xe7a1_0000_0000_0000
}

/// Trained artifacts that can be reused across runs on the same agents.
#[derive(Debug, Clone, Default)]
pub struct Pretrained {
    pub meta: Option<PolicyParams>,
}

/// Train the shared meta-policy on tasks drawn from the scenario's agents,
/// using the group sizes of `spec`.
pub fn train_meta(cfg: &ScenarioConfig, agents: &[AgentModel], spec: &PartitionSpec) -> Result<(PolicyParams, Vec<IterationStats>)> {
    let sampler = PoolSampler {
        pool: kernels_of(agents),
        sizes: spec.groups.iter().map(Vec::len).collect(),
        budget_per_agent: cfg.total_budget() as f64 / cfg.n as f64,
        budget_factor: (cfg.budget_factor[0], cfg.budget_factor[1]),
    };
    let out = meta_train(&sampler, &cfg.ppo_config())?;
    Ok((out.params, out.history))
}

/// Fine-tune a clone of `meta` on every group (in parallel).
pub fn finetune_groups(
    meta: &PolicyParams,
    spec: &PartitionSpec,
    kernels: &[KernelRef],
    ppo: &PpoConfig,
) -> Result<Vec<PolicyParams>> {
    spec.groups
        .par_iter()
        .zip(&spec.budgets)
        .enumerate()
        .map(|(q, (members, &budget))| {
            let task = GroupTask {
                kernels: members.iter().map(|&a| kernels[a].clone()).collect(),
                budget,
            };
            let cfg = PpoConfig {
                seed: ppo.seed.wrapping_add(q as u64 + 1),
                ..*ppo
            };
            Ok(finetune(meta, &task, &cfg)?)
        })
        .collect()
}

/// Run the configured method on pre-generated agents.
pub fn run_method(cfg: &ScenarioConfig, agents: &[AgentModel], pretrained: &Pretrained) -> Result<PipelineOutput> {
    cfg.validate()?;
    if agents.len() != cfg.n {
        return Err(ExperimentError::InvalidConfig(format!(
            "scenario has {} agents, config says n = {}",
            agents.len(),
            cfg.n
        )));
    }
    let kernels = kernels_of(agents);
    let budget = cfg.total_budget();
    let env = FleetEnv::new(kernels.clone(), budget, cfg.r, cfg.reward())?;
    let seed = eval_seed(cfg);
    let mut partition_seconds = 0.0;
    let mut partition = None;
    let mut training = Vec::new();
    let mut policy = None;

    let policy_start = Instant::now();
    let (records, policy_seconds, eval_seconds) = match cfg.method {
        Method::LsapMetaPpo | Method::RpPpo => {
            let t = Instant::now();
            let spec = if cfg.method == Method::LsapMetaPpo {
                lsap_partition(agents, cfg.r, budget, cfg.seed)?
            } else {
                random_partition(cfg.n, cfg.r, budget, &mut stream_rng(cfg.seed, 1))?
            };
            partition_seconds = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let meta = match &pretrained.meta {
                Some(m) => m.clone(),
                None => {
                    let (m, h) = train_meta(cfg, agents, &spec)?;
                    training = h;
                    m
                }
            };
            let tuned = finetune_groups(&meta, &spec, &kernels, &cfg.ppo_config())?;
            let joint = compose(tuned, &spec, ActionSelection::Greedy)?;
            let policy_s = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let records = evaluate_fleet(&env, &joint, cfg.eval_episodes, seed);
            partition = Some(spec);
            policy = Some(meta);
            (records, policy_s, t.elapsed().as_secs_f64())
        }
        Method::VanillaPpo => {
            let task = FleetTask {
                kernels: kernels.clone(),
                budget,
                capacity: cfg.r,
            };
            let out = vanilla_ppo_train(&task, &cfg.ppo_config())?;
            training = out.history;
            let p = VanillaPpoPolicy {
                params: out.params.clone(),
                selection: ActionSelection::Greedy,
            };
            let policy_s = policy_start.elapsed().as_secs_f64();
            let t = Instant::now();
            let records = evaluate_fleet(&env, &p, cfg.eval_episodes, seed);
            policy = Some(out.params);
            (records, policy_s, t.elapsed().as_secs_f64())
        }
        Method::Ga => {
            let p = GaPolicy::new(kernels.clone(), GaConfig { seed: cfg.seed, ..cfg.ga })?;
            let t = Instant::now();
            (evaluate_fleet(&env, &p, cfg.eval_episodes, seed), 0.0, t.elapsed().as_secs_f64())
        }
        Method::Auction => {
            let p = AuctionPolicy { weights: cfg.auction };
            let t = Instant::now();
            (evaluate_fleet(&env, &p, cfg.eval_episodes, seed), 0.0, t.elapsed().as_secs_f64())
        }
        Method::Noop => {
            let t = Instant::now();
            (evaluate_fleet(&env, &NoopPolicy, cfg.eval_episodes, seed), 0.0, t.elapsed().as_secs_f64())
        }
        Method::ExactDp => {
            let grid = cfg.ci_grid.ok_or_else(|| ExperimentError::Infeasible {
                method: Method::ExactDp,
                reason: "requires a coarse CI grid (ci_grid)".into(),
            })?;
            let dp = exact_dp_value(&kernels, cfg.r, budget, cfg.horizon, grid).map_err(|e| {
                ExperimentError::Infeasible {
                    method: Method::ExactDp,
                    reason: e.to_string(),
                }
            })?;
            let p = DpPolicy { dp };
            let policy_s = policy_start.elapsed().as_secs_f64();
            let t = Instant::now();
            (evaluate_fleet(&env, &p, cfg.eval_episodes, seed), policy_s, t.elapsed().as_secs_f64())
        }
    };

    let t_abs: Vec<f64> = records.iter().map(|r| r.t_abs as f64).collect();
    let repairs: Vec<f64> = records.iter().map(|r| r.repairs_used as f64).collect();
    let (mean_t_abs, std_t_abs) = mean_std(&t_abs);
    let (mean_repairs, std_repairs) = mean_std(&repairs);
    let summary = RunSummary {
        scenario_id: cfg.scenario_id(),
        method: cfg.method,
        n: cfg.n,
        r: cfg.r,
        budget,
        horizon: cfg.horizon,
        episodes: records.len(),
        mean_t_abs,
        std_t_abs,
        mean_repairs,
        std_repairs,
        budget_violations: records.iter().filter(|r| r.violated_budget).count(),
        capacity_violations: records.iter().filter(|r| r.violated_capacity).count(),
        partition_seconds,
        policy_seconds,
        eval_seconds,
    };
    Ok(PipelineOutput {
        summary,
        episodes: records,
        partition,
        training,
        policy,
    })
}

/// Generate the scenario and run the configured method on it.
pub fn run_pipeline(cfg: &ScenarioConfig) -> Result<PipelineOutput> {
    let agents = generate_scenario(cfg)?;
    run_method(cfg, &agents, &Pretrained::default())
}

/// `run_method` at each budget on one shared set of agents and seeds.
pub fn budget_sweep(cfg: &ScenarioConfig, budgets: &[u32]) -> Result<Vec<RunSummary>> {
    let agents = generate_scenario(cfg)?;
    budgets
        .iter()
        .map(|&b| {
            let c = ScenarioConfig {
                budget: Some(b),
                ..cfg.clone()
            };
            Ok(run_method(&c, &agents, &Pretrained::default())?.summary)
        })
        .collect()
}

/// Timing of one `(n, r)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub n: usize,
    pub r: usize,
    pub repeats: usize,
    /// Median over repeats of TTA estimation + distances + LSAP partition.
    pub partition_seconds: f64,
    /// Median over repeats of per-group fine-tuning + composition + rollout.
    pub policy_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<TimingRow>,
    /// Least-squares slope of `ln(total)` against `ln(n)`.
    pub loglog_slope: f64,
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Inference-only pipeline timing for each `(n, r)`: given a trained
/// meta-policy, time partitioning (TTA features, distances, LSAP) and policy
/// generation (fine-tune every group, compose, one fleet rollout). All work
/// runs on a single thread so cells are comparable.
pub fn scaling_study(
    base: &ScenarioConfig,
    sizes: &[(usize, usize)],
    meta: &PolicyParams,
    repeats: usize,
) -> Result<ScalingReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
    let slots = meta.net.shape.actions - 1;
    let mut rows = Vec::with_capacity(sizes.len());
    for &(n, r) in sizes {
        let cfg = ScenarioConfig {
            n,
            r,
            budget: None,
            ..base.clone()
        };
        cfg.validate()?;
        if n.div_ceil(r) > slots {
            return Err(ExperimentError::InvalidConfig(format!(
                "groups of up to {} agents do not fit a {slots}-slot meta-policy",
                n.div_ceil(r)
            )));
        }
        let (mut part, mut pol) = (Vec::with_capacity(repeats), Vec::with_capacity(repeats));
        for rep in 0..repeats {
            let c = ScenarioConfig {
                seed: base.seed.wrapping_add(rep as u64),
                ..cfg.clone()
            };
            let (p, q) = pool.install(|| time_pipeline(&c, meta))?;
            part.push(p);
            pol.push(q);
        }
        let partition_seconds = median(part);
        let policy_seconds = median(pol);
        rows.push(TimingRow {
            n,
            r,
            repeats,
            partition_seconds,
            policy_seconds,
            total_seconds: partition_seconds + policy_seconds,
        });
    }
    let x: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.total_seconds.ln()).collect();
    let loglog_slope = if rows.len() >= 2 { ols_slope(&x, &y) } else { f64::NAN };
    Ok(ScalingReport { rows, loglog_slope })
}

fn time_pipeline(cfg: &ScenarioConfig, meta: &PolicyParams) -> Result<(f64, f64)> {
    // Weibull parameters are drawn outside the timed region.
    let mut rng = stream_rng(cfg.seed, 0);
    let params: Vec<WeibullParams> = (0..cfg.n)
        .map(|_| {
            let shape = uniform(&mut rng, cfg.shape_range);
            let scale = uniform(&mut rng, cfg.scale_range);
            WeibullParams::new(shape, scale)
        })
        .collect::<std::result::Result<_, _>>()?;
    let budget = cfg.total_budget();

    let t = Instant::now();
    let agents: Vec<AgentModel> = params
        .into_iter()
        .enumerate()
        .map(|(i, p)| AgentModel::new(i, p, TtaMode::MonteCarlo { num_runs: cfg.tta_runs }, cfg.seed ^ i as u64))
        .collect::<std::result::Result<_, _>>()?;
    let spec = lsap_partition(&agents, cfg.r, budget, cfg.seed)?;
    let partition_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let kernels = kernels_of(&agents);
    let tuned = finetune_groups(meta, &spec, &kernels, &cfg.ppo_config())?;
    let mut joint = compose(tuned, &spec, ActionSelection::Greedy)?;
    let env = FleetEnv::new(kernels, budget, cfg.r, cfg.reward())?;
    env.run_episode(&mut joint, &mut stream_rng(eval_seed(cfg), 0));
    Ok((partition_seconds, t.elapsed().as_secs_f64()))
}

/// Meta-policy sized for the largest group among `sizes`, trained on the
/// scenario `base` (used by timing studies, which only need inference).
pub fn train_meta_for_sizes(base: &ScenarioConfig, sizes: &[(usize, usize)]) -> Result<PolicyParams> {
    let agents = generate_scenario(base)?;
    let slots = sizes.iter().map(|&(n, r)| n.div_ceil(r)).max().unwrap_or(1);
    let spec = lsap_partition(&agents, base.r, base.total_budget(), base.seed)?;
    if spec.max_group_size() >= slots {
        return Ok(train_meta(base, &agents, &spec)?.0);
    }
    // Widen the network so every requested group fits.
    let sampler = PoolSampler {
        pool: kernels_of(&agents),
        sizes: spec.groups.iter().map(Vec::len).chain([slots]).collect(),
        budget_per_agent: base.total_budget() as f64 / base.n as f64,
        budget_factor: (base.budget_factor[0], base.budget_factor[1]),
    };
    let cfg = base.ppo_config();
    if cfg.meta_iterations == 0 {
        return Ok(init_params(slots, &cfg));
    }
    Ok(meta_train(&sampler, &cfg)?.params)
}

/// Diversity of LSAP, pair-round-robin LSAP and random partitions for one
/// `(n, r)` over several seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub n: usize,
    pub r: usize,
    pub seeds: usize,
    pub lsap_mean: f64,
    pub lsap_std: f64,
    pub random_mean: f64,
    pub random_std: f64,
    pub pair_rr_mean: f64,
    pub pair_rr_std: f64,
    /// Fraction of seeds with `d_lsap > d_random`.
    pub lsap_win_rate: f64,
    pub pair_rr_win_rate: f64,
    /// `(mean d_lsap - mean d_random) / mean d_random`.
    pub relative_gap: f64,
}

/// Per-seed diversity triple `(lsap, random, pair_rr)`.
pub fn partition_quality_samples(base: &ScenarioConfig, n: usize, r: usize, seeds: usize) -> Result<Vec<[f64; 3]>> {
    (0..seeds)
        .into_par_iter()
        .map(|s| {
            let cfg = ScenarioConfig {
                n,
                r,
                budget: None,
                seed: base.seed.wrapping_add(s as u64),
                ..base.clone()
            };
            let agents = generate_scenario(&cfg)?;
            let stats: Vec<_> = agents.iter().map(|a| a.tta).collect();
            let d = distance_matrix(&stats);
            let budget = cfg.total_budget();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9a27);
            let lsap = build_partition(&d, r, budget, &mut rng)?;
            let pair = build_partition_pair_rr(&d, r, budget, &mut rng)?;
            let rand_spec = random_partition(n, r, budget, &mut rng)?;
            Ok([
                diversity_score(&lsap, &d),
                diversity_score(&rand_spec, &d),
                diversity_score(&pair, &d),
            ])
        })
        .collect()
}

pub fn partition_quality_report(base: &ScenarioConfig, sizes: &[(usize, usize)], seeds: usize) -> Result<Vec<QualityRow>> {
    sizes
        .iter()
        .map(|&(n, r)| {
            let samples = partition_quality_samples(base, n, r, seeds)?;
            let col = |i: usize| samples.iter().map(|s| s[i]).collect::<Vec<_>>();
            let (lsap_mean, lsap_std) = mean_std(&col(0));
            let (random_mean, random_std) = mean_std(&col(1));
            let (pair_rr_mean, pair_rr_std) = mean_std(&col(2));
            let wins = |i: usize| samples.iter().filter(|s| s[i] > s[1]).count() as f64 / seeds as f64;
            Ok(QualityRow {
                n,
                r,
                seeds,
                lsap_mean,
                lsap_std,
                random_mean,
                random_std,
                pair_rr_mean,
                pair_rr_std,
                lsap_win_rate: wins(0),
                pair_rr_win_rate: wins(2),
                relative_gap: (lsap_mean - random_mean) / random_mean,
            })
        })
        .collect()
}

/// Write rows as CSV with a header.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent_kernel::toy;

    fn small(method: Method) -> ScenarioConfig {
        ScenarioConfig {
            n: 4,
            r: 2,
            eval_episodes: 20,
            tta_runs: 200,
            method,
            seed: 3,
            ppo: PpoConfig {
                hidden: 8,
                meta_iterations: 2,
                episodes_per_iteration: 4,
                finetune_steps: 1,
                ..PpoConfig::default()
            },
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn scenario_is_deterministic_and_in_range() {
        let cfg = ScenarioConfig {
            n: 30,
            tta_runs: 50,
            ..ScenarioConfig::default()
        };
        let a = generate_scenario(&cfg).unwrap();
        let b = generate_scenario(&cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.params, y.params);
            assert_eq!(x.tta, y.tta);
            assert!((1.0..=7.0).contains(&x.params.shape));
            assert!((25.0..=70.0).contains(&x.params.scale));
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("ilp".parse::<Method>().is_err());
    }

    #[test]
    fn noop_on_immortal_agents_survives() {
        let cfg = small(Method::Noop);
        let mut agents = generate_scenario(&cfg).unwrap();
        for a in agents.iter_mut() {
            a.kernel = Arc::new(toy::immortal());
        }
        let out = run_method(&cfg, &agents, &Pretrained::default()).unwrap();
        assert_eq!(out.summary.mean_t_abs, cfg.horizon as f64);
        assert_eq!(out.summary.mean_repairs, 0.0);
    }

    #[test]
    fn every_method_respects_constraints() {
        for m in [Method::LsapMetaPpo, Method::RpPpo, Method::VanillaPpo, Method::Ga, Method::Auction, Method::Noop] {
            let out = run_pipeline(&small(m)).unwrap();
            assert_eq!(out.summary.budget_violations, 0, "{m}");
            assert_eq!(out.summary.capacity_violations, 0, "{m}");
            assert!(out.episodes.iter().all(|e| e.repairs_used <= 40 && e.t_abs <= 100));
        }
    }

    #[test]
    fn exact_dp_needs_tiny_coarse_scenarios() {
        let cfg = small(Method::ExactDp);
        assert!(matches!(run_pipeline(&cfg), Err(ExperimentError::Infeasible { .. })));
        let tiny = ScenarioConfig {
            n: 2,
            r: 1,
            budget: Some(3),
            horizon: 15,
            ci_grid: Some(10),
            ..cfg
        };
        let out = run_pipeline(&tiny).unwrap();
        assert_eq!(out.summary.budget_violations, 0);
    }

    #[test]
    fn budget_zero_sweep_equals_noop() {
        let cfg = small(Method::Auction);
        let sweep = budget_sweep(&cfg, &[0, 20]).unwrap();
        let noop = run_pipeline(&ScenarioConfig {
            method: Method::Noop,
            ..cfg.clone()
        })
        .unwrap();
        assert_eq!(sweep[0].mean_t_abs, noop.summary.mean_t_abs);
        assert!(sweep.iter().all(|s| s.mean_t_abs <= cfg.horizon as f64));
    }

    #[test]
    fn singleton_groups_have_zero_diversity() {
        let cfg = ScenarioConfig {
            tta_runs: 50,
            ..ScenarioConfig::default()
        };
        let rows = partition_quality_report(&cfg, &[(6, 6)], 3).unwrap();
        assert_eq!(rows[0].lsap_mean, 0.0);
        assert_eq!(rows[0].random_mean, 0.0);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let x: Vec<f64> = [10.0f64, 50.0, 100.0, 500.0].iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 * v + 0.3).collect();
        assert!((ols_slope(&x, &y) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(Method::Auction);
        let out = run_pipeline(&cfg).unwrap();
        let path = dir.path().join("episodes.csv");
        write_csv(&path, &out.rows(&cfg)).unwrap();
        let mut rdr = csv::Reader::from_path(&path).unwrap();
        let back: Vec<EpisodeRow> = rdr.deserialize().collect::<std::result::Result<_, _>>().unwrap();
        assert_eq!(back, out.rows(&cfg));
    }
}
