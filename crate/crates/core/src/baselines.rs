//! Comparison planners: an auction heuristic, a myopic genetic algorithm,
//! PPO on the unpartitioned fleet, and an exact dynamic-programming oracle
//! for tiny instances.

use rand::seq::index::sample;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent_kernel::{ModelError, CI_MAX};
use crate::env::{fleet_step, EpisodeRecord, FleetPolicy, FleetView, KernelRef};
use crate::nn::{ForwardCache, NetShape, PolicyParams};
use crate::ppo::{
    argmax, sample_index, stream_rng, train_loop, ActionSelection, CollectedEpisode, PpoConfig, TrainError,
    TrainOutput, TrajectoryBatch,
};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("state space of {states} exceeds the limit of {limit}")]
    TooLarge { states: u64, limit: u64 },
    #[error("kernel of agent {agent} is not supported on the CI grid with step {step}")]
    OffGrid { agent: usize, step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

// ---------------------------------------------------------------- auction

/// Bid weights `(w0, w1)` for `bid = w0 + w1 (100 - ci) / 100`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuctionWeights {
    pub w0: f64,
    pub w1: f64,
}

impl Default for AuctionWeights {
    fn default() -> Self {
        Self { w0: 0.0, w1: 1.0 }
    }
}

/// The highest positive bidders, at most `capacity` and at most `budget`
/// of them. Ties go to the lower agent index.
pub fn auction_policy(ci: &[usize], budget: u32, capacity: usize, weights: AuctionWeights) -> Vec<usize> {
    let mut bids: Vec<(usize, f64)> = ci
        .iter()
        .enumerate()
        .map(|(i, &c)| (i, weights.w0 + weights.w1 * (CI_MAX - c.min(CI_MAX)) as f64 / CI_MAX as f64))
        .filter(|(_, b)| *b > 0.0)
        .collect();
    bids.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    bids.truncate(capacity.min(budget as usize));
    let mut out: Vec<usize> = bids.into_iter().map(|(i, _)| i).collect();
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AuctionPolicy {
    pub weights: AuctionWeights,
}

impl FleetPolicy for AuctionPolicy {
    fn act(&mut self, view: &FleetView<'_>, _: &mut dyn RngCore) -> Vec<usize> {
        auction_policy(view.ci, view.residual_budget, view.capacity, self.weights)
    }
}

// ---------------------------------------------------------------------- GA

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 32,
            generations: 20,
            crossover_rate: 0.9,
            mutation_rate: 0.05,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        let rate_ok = |r: f64| (0.0..=1.0).contains(&r);
        if !rate_ok(self.crossover_rate) || !rate_ok(self.mutation_rate) {
            return Err(BaselineError::InvalidConfig("GA rates must lie in [0, 1]".into()));
        }
        if self.population < 2 || self.generations < 1 {
            return Err(BaselineError::InvalidConfig(
                "GA needs a population of at least 2 and at least one generation".into(),
            ));
        }
        Ok(())
    }
}

/// Expected next-step total CI when the agents flagged in `genome` are
/// repaired and the rest idle.
#[derive(Debug, Clone)]
pub struct GaFitness {
    base: f64,
    gains: Vec<f64>,
}

impl GaFitness {
    pub fn new(ci: &[usize], kernels: &[KernelRef]) -> Self {
        let expected: Vec<f64> = ci.iter().zip(kernels).map(|(&c, k)| k.expected_next(c)).collect();
        Self {
            base: expected.iter().sum(),
            gains: expected.iter().map(|e| CI_MAX as f64 - e).collect(),
        }
    }

    pub fn eval(&self, genome: &[bool]) -> f64 {
        self.base
            + genome
                .iter()
                .zip(&self.gains)
                .filter(|(g, _)| **g)
                .map(|(_, gain)| gain)
                .sum::<f64>()
    }
}

/// Clear random set bits until at most `limit` remain.
fn repair_genome<R: Rng + ?Sized>(genome: &mut [bool], limit: usize, rng: &mut R) {
    let ones: Vec<usize> = (0..genome.len()).filter(|&i| genome[i]).collect();
    if ones.len() <= limit {
        return;
    }
    for j in sample(rng, ones.len(), ones.len() - limit) {
        genome[ones[j]] = false;
    }
}

/// Trace of one GA run.
#[derive(Debug, Clone)]
pub struct GaOutcome {
    pub best: Vec<bool>,
    /// Best fitness after each generation (index 0 is the initial population).
    pub best_fitness: Vec<f64>,
    pub population: Vec<Vec<bool>>,
}

/// Evolve `population` under rank selection, two-point crossover, bit-flip
/// mutation and single-individual elitism. Every individual is kept within
/// `limit` set bits.
pub fn ga_evolve<R: Rng + ?Sized>(
    mut population: Vec<Vec<bool>>,
    fitness: &GaFitness,
    limit: usize,
    cfg: &GaConfig,
    rng: &mut R,
) -> GaOutcome {
    let p = population.len();
    let n = population.first().map_or(0, Vec::len);
    for g in population.iter_mut() {
        repair_genome(g, limit, rng);
    }
    let rank_total = (p * (p + 1) / 2) as f64;
    let mut scored = score(&population, fitness);
    let mut history = vec![scored[0].1];
    for _ in 0..cfg.generations {
        // Elite first, then offspring of rank-selected parents.
        let mut next = Vec::with_capacity(p);
        next.push(population[scored[0].0].clone());
        let pick = |rng: &mut R| {
            // Rank i (0 = best) has weight p - i.
            let mut u = rng.random::<f64>() * rank_total;
            for (rank, &(idx, _)) in scored.iter().enumerate() {
                u -= (p - rank) as f64;
                if u < 0.0 {
                    return idx;
                }
            }
            scored[p - 1].0
        };
        while next.len() < p {
            let a = pick(rng);
            let b = pick(rng);
            let mut c1 = population[a].clone();
            let mut c2 = population[b].clone();
            if n >= 2 && rng.random::<f64>() < cfg.crossover_rate {
                let mut x = rng.random_range(0..n);
                let mut y = rng.random_range(0..n);
                if x > y {
                    std::mem::swap(&mut x, &mut y);
                }
                for i in x..=y {
                    std::mem::swap(&mut c1[i], &mut c2[i]);
                }
            }
            for child in [&mut c1, &mut c2] {
                if cfg.mutation_rate > 0.0 {
                    for bit in child.iter_mut() {
                        if rng.random::<f64>() < cfg.mutation_rate {
                            *bit = !*bit;
                        }
                    }
                }
                repair_genome(child, limit, rng);
            }
            next.push(c1);
            if next.len() < p {
                next.push(c2);
            }
        }
        population = next;
        scored = score(&population, fitness);
        history.push(scored[0].1);
    }
    GaOutcome {
        best: population[scored[0].0].clone(),
        best_fitness: history,
        population,
    }
}

/// `(index, fitness)` sorted best first, ties by index.
fn score(population: &[Vec<bool>], fitness: &GaFitness) -> Vec<(usize, f64)> {
    let mut s: Vec<(usize, f64)> = population.iter().map(|g| fitness.eval(g)).enumerate().collect();
    s.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    s
}

/// Plan one step's repairs with a freshly initialised population.
pub fn ga_policy_step<R: Rng + ?Sized>(
    ci: &[usize],
    budget: u32,
    capacity: usize,
    kernels: &[KernelRef],
    cfg: &GaConfig,
    rng: &mut R,
) -> Vec<usize> {
    let n = ci.len();
    let limit = capacity.min(budget as usize).min(n);
    if limit == 0 || n == 0 {
        return Vec::new();
    }
    let density = limit as f64 / n as f64;
    let population = (0..cfg.population)
        .map(|_| (0..n).map(|_| rng.random::<f64>() < density).collect())
        .collect();
    let fitness = GaFitness::new(ci, kernels);
    let out = ga_evolve(population, &fitness, limit, cfg, rng);
    (0..n).filter(|&i| out.best[i]).collect()
}

/// Re-plans every step; evolution draws from its own stream seeded by
/// `GaConfig::seed`, independent of the environment's randomness.
#[derive(Debug, Clone)]
pub struct GaPolicy {
    kernels: Vec<KernelRef>,
    cfg: GaConfig,
    rng: ChaCha8Rng,
}

impl GaPolicy {
    pub fn new(kernels: Vec<KernelRef>, cfg: GaConfig) -> Result<Self, BaselineError> {
        cfg.validate()?;
        let rng = stream_rng(cfg.seed, 0);
        Ok(Self { kernels, cfg, rng })
    }
}

impl FleetPolicy for GaPolicy {
    fn act(&mut self, view: &FleetView<'_>, _: &mut dyn RngCore) -> Vec<usize> {
        ga_policy_step(view.ci, view.residual_budget, view.capacity, &self.kernels, &self.cfg, &mut self.rng)
    }
}

// ------------------------------------------------------------ vanilla PPO

/// The whole fleet as a single training environment.
#[derive(Debug, Clone)]
pub struct FleetTask {
    pub kernels: Vec<KernelRef>,
    pub budget: u32,
    pub capacity: usize,
}

/// Observation `[ci / 100; n] ++ [budget fraction; n] ++ [chosen; n]` and
/// actions `0 = stop`, `i = repair agent i - 1`.
pub fn vanilla_net_shape(n: usize, hidden: usize) -> NetShape {
    NetShape {
        input: 3 * n,
        hidden,
        actions: n + 1,
    }
}

fn encode_vanilla(ci: &[usize], spendable: u32, initial_budget: u32, chosen: &[bool], out: &mut Vec<f64>) {
    out.clear();
    out.extend(ci.iter().map(|&c| c as f64 / CI_MAX as f64));
    let frac = if initial_budget == 0 {
        0.0
    } else {
        spendable as f64 / initial_budget as f64
    };
    out.extend(std::iter::repeat_n(frac, ci.len()));
    out.extend(chosen.iter().map(|&c| if c { 1.0 } else { 0.0 }));
}

fn vanilla_mask(chosen: &[bool], spendable: u32, mask: &mut Vec<bool>) {
    mask.clear();
    mask.push(true);
    mask.extend(chosen.iter().map(|&c| !c && spendable > 0));
}

/// Shared per-step decision loop: up to `capacity` sequential picks, each
/// excluding agents already chosen and capped by the residual budget.
/// `on_pick` sees every decision (observation, mask, cache, action).
fn vanilla_decide(
    params: &PolicyParams,
    ci: &[usize],
    residual: u32,
    initial_budget: u32,
    capacity: usize,
    selection: ActionSelection,
    rng: &mut dyn RngCore,
    mut on_pick: impl FnMut(&[f64], &[bool], &ForwardCache, usize),
) -> Vec<usize> {
    let n = ci.len();
    let mut chosen = vec![false; n];
    let mut picks = Vec::new();
    let (mut obs, mut mask, mut cache) = (Vec::new(), Vec::new(), ForwardCache::default());
    for _ in 0..capacity.max(1) {
        let spendable = residual.saturating_sub(picks.len() as u32);
        let allowed = if picks.len() < capacity { spendable } else { 0 };
        encode_vanilla(ci, spendable, initial_budget, &chosen, &mut obs);
        vanilla_mask(&chosen, allowed, &mut mask);
        params
            .net
            .forward_cached(&obs, Some(&mask), &mut cache)
            .expect("vanilla observation matches the network");
        let action = match selection {
            ActionSelection::Greedy => argmax(&cache.probs),
            ActionSelection::Sample => sample_index(&cache.probs, rng),
        };
        on_pick(&obs, &mask, &cache, action);
        if action == 0 {
            break;
        }
        chosen[action - 1] = true;
        picks.push(action - 1);
    }
    picks.sort_unstable();
    picks
}

fn collect_vanilla_episode(
    params: &PolicyParams,
    task: &FleetTask,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<CollectedEpisode, TrainError> {
    let n = task.kernels.len();
    let horizon = cfg.reward.horizon;
    let scale = cfg.reward_scale();
    let mut batch = TrajectoryBatch::new(3 * n, n + 1);
    let mut ci = vec![CI_MAX; n];
    let mut residual = task.budget;
    let mut record = EpisodeRecord {
        t_abs: horizon,
        repairs_used: 0,
        total_reward: 0.0,
        violated_budget: false,
        violated_capacity: false,
    };
    for k in 0..horizon {
        let picks = {
            let batch = &mut batch;
            let mut draw = stream_rng(rng.random(), 0);
            vanilla_decide(
                params,
                &ci,
                residual,
                task.budget,
                task.capacity,
                ActionSelection::Sample,
                &mut draw,
                |obs, mask, cache, a| batch.push(obs, mask, a, cache.log_probs[a], 0.0, cache.value, false),
            )
        };
        let (reward, failed) = fleet_step(&mut ci, &picks, &task.kernels, &cfg.reward, k, rng);
        residual -= picks.len() as u32;
        record.repairs_used += picks.len() as u32;
        record.total_reward += reward;
        let last = batch.len() - 1;
        batch.rewards[last] = reward * scale;
        if failed || k + 1 == horizon {
            batch.dones[last] = true;
        }
        if failed {
            record.t_abs = k + 1;
            break;
        }
    }
    batch.finish_segment(0, 0.0, cfg.gamma, cfg.gae_lambda);
    Ok(CollectedEpisode { batch, record })
}

/// PPO on the full fleet with sequential repair sub-decisions.
pub fn vanilla_ppo_train(task: &FleetTask, cfg: &PpoConfig) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    if task.capacity == 0 || task.kernels.is_empty() {
        return Err(TrainError::InvalidConfig("vanilla PPO needs agents and capacity".into()));
    }
    let shape = vanilla_net_shape(task.kernels.len(), cfg.hidden);
    let params = PolicyParams::new(shape, cfg.reward_scale(), &mut stream_rng(cfg.seed, u64::MAX));
    let (params, history) = train_loop(params, cfg, cfg.seed, cfg.meta_iterations, |p, rng| {
        collect_vanilla_episode(p, task, cfg, rng)
    })?;
    Ok(TrainOutput { params, history })
}

/// Evaluation wrapper around a vanilla-PPO network.
#[derive(Debug, Clone)]
pub struct VanillaPpoPolicy {
    pub params: PolicyParams,
    pub selection: ActionSelection,
}

impl FleetPolicy for VanillaPpoPolicy {
    fn act(&mut self, view: &FleetView<'_>, rng: &mut dyn RngCore) -> Vec<usize> {
        vanilla_decide(
            &self.params,
            view.ci,
            view.residual_budget,
            view.initial_budget,
            view.capacity,
            self.selection,
            rng,
            |_, _, _, _| {},
        )
    }
}

// ----------------------------------------------------------------- exact DP

/// Largest `levels^n * (B + 1) * H` the oracle accepts.
pub const DP_STATE_LIMIT: u64 = 10_000_000;
pub const DP_MAX_AGENTS: usize = 2;
pub const DP_MAX_BUDGET: u32 = 5;
pub const DP_MAX_HORIZON: usize = 20;

/// Optimal expected survival time by backward induction over
/// `(step, residual budget, CI vector)` on the grid `0, step, ..., 100`.
///
/// `value(k, b, s)` is the expected `t_abs` given all agents alive in `s`
/// at time `k`; a failure during step `k` yields `k + 1` and surviving to
/// the horizon yields `H`.
#[derive(Debug, Clone)]
pub struct ExactDp {
    n: usize,
    levels: usize,
    grid_step: usize,
    budget: u32,
    horizon: usize,
    values: Vec<f64>,
    actions: Vec<u8>,
}

impl ExactDp {
    fn states(&self) -> usize {
        self.levels.pow(self.n as u32)
    }

    fn index(&self, k: usize, b: u32, s: usize) -> usize {
        (k * (self.budget as usize + 1) + b as usize) * self.states() + s
    }

    fn encode(&self, ci: &[usize]) -> Option<usize> {
        let mut s = 0;
        for &c in ci.iter().rev() {
            if c % self.grid_step != 0 {
                return None;
            }
            s = s * self.levels + c / self.grid_step;
        }
        Some(s)
    }

    /// Optimal expected `t_abs` from `ci` at time 0 with budget `b`.
    pub fn value(&self, ci: &[usize], b: u32) -> Option<f64> {
        self.value_at(0, ci, b)
    }

    pub fn value_at(&self, k: usize, ci: &[usize], b: u32) -> Option<f64> {
        if ci.len() != self.n || b > self.budget || k > self.horizon {
            return None;
        }
        if ci.contains(&0) {
            return Some(k as f64);
        }
        self.encode(ci).map(|s| self.values[self.index(k, b, s)])
    }

    /// Optimal repair set at `(k, ci, b)`; ties prefer fewer repairs.
    pub fn action(&self, k: usize, ci: &[usize], b: u32) -> Option<Vec<usize>> {
        if ci.len() != self.n || b > self.budget || k >= self.horizon || ci.contains(&0) {
            return None;
        }
        let s = self.encode(ci)?;
        let mask = self.actions[self.index(k, b, s)];
        Some((0..self.n).filter(|i| mask & (1 << i) != 0).collect())
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

/// Solve the exact fleet MDP. Kernels must already be supported on the CI
/// grid (see `DeteriorationKernel::coarsened`).
pub fn exact_dp_value(
    kernels: &[KernelRef],
    capacity: usize,
    budget: u32,
    horizon: usize,
    grid_step: usize,
) -> Result<ExactDp, BaselineError> {
    let n = kernels.len();
    if n == 0 || n > DP_MAX_AGENTS || budget > DP_MAX_BUDGET || horizon == 0 || horizon > DP_MAX_HORIZON {
        return Err(BaselineError::InvalidConfig(format!(
            "exact DP supports 1..={DP_MAX_AGENTS} agents, budget <= {DP_MAX_BUDGET}, horizon 1..={DP_MAX_HORIZON}; got n={n}, B={budget}, H={horizon}"
        )));
    }
    if grid_step == 0 || !CI_MAX.is_multiple_of(grid_step) {
        return Err(BaselineError::InvalidConfig(format!("grid step {grid_step} must divide {CI_MAX}")));
    }
    let levels = CI_MAX / grid_step + 1;
    let states = (levels as u64).pow(n as u32) * (budget as u64 + 1) * horizon as u64;
    if states > DP_STATE_LIMIT {
        return Err(BaselineError::TooLarge {
            states,
            limit: DP_STATE_LIMIT,
        });
    }

    // Sparse grid rows per agent; row 0 is never used.
    let mut rows: Vec<Vec<Vec<(usize, f64)>>> = Vec::with_capacity(n);
    for (agent, kernel) in kernels.iter().enumerate() {
        let mut agent_rows = vec![Vec::new(); levels];
        for (g, row) in agent_rows.iter_mut().enumerate().skip(1) {
            let h = g * grid_step;
            let mut on_grid = 0.0;
            for next in 0..=h {
                let p = kernel.prob(h, next);
                if p > 0.0 {
                    if next % grid_step != 0 {
                        return Err(BaselineError::OffGrid { agent, step: grid_step });
                    }
                    row.push((next / grid_step, p));
                    on_grid += p;
                }
            }
            if (on_grid - 1.0).abs() > 1e-9 {
                return Err(BaselineError::OffGrid { agent, step: grid_step });
            }
        }
        rows.push(agent_rows);
    }
    let top = levels - 1;
    let repaired_row = vec![(top, 1.0)];

    let mut dp = ExactDp {
        n,
        levels,
        grid_step,
        budget,
        horizon,
        values: vec![0.0; (horizon + 1) * (budget as usize + 1) * levels.pow(n as u32)],
        actions: vec![0; (horizon + 1) * (budget as usize + 1) * levels.pow(n as u32)],
    };
    let num_states = dp.states();
    for b in 0..=budget {
        for s in 0..num_states {
            let i = dp.index(horizon, b, s);
            dp.values[i] = horizon as f64;
        }
    }

    // Action masks ordered by number of repairs so ties keep the cheaper one.
    let mut masks: Vec<u8> = (0..(1u8 << n)).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));

    let mut digits = vec![0usize; n];
    let mut cursor = vec![0usize; n];
    for k in (0..horizon).rev() {
        for b in 0..=budget {
            for s in 0..num_states {
                let mut rem = s;
                for d in digits.iter_mut() {
                    *d = rem % levels;
                    rem /= levels;
                }
                if digits.contains(&0) {
                    continue;
                }
                let mut best = f64::NEG_INFINITY;
                let mut best_mask = 0u8;
                for &mask in &masks {
                    let used = mask.count_ones();
                    if used as usize > capacity || used > b {
                        continue;
                    }
                    let agent_rows: Vec<&[(usize, f64)]> = (0..n)
                        .map(|i| {
                            if mask & (1 << i) != 0 {
                                repaired_row.as_slice()
                            } else {
                                rows[i][digits[i]].as_slice()
                            }
                        })
                        .collect();
                    // Sum over the product of per-agent successor lists.
                    let mut total = 0.0;
                    cursor.iter_mut().for_each(|c| *c = 0);
                    'outer: loop {
                        let mut p = 1.0;
                        let mut next = 0usize;
                        let mut failed = false;
                        for i in (0..n).rev() {
                            let (g, q) = agent_rows[i][cursor[i]];
                            p *= q;
                            failed |= g == 0;
                            next = next * levels + g;
                        }
                        total += p * if failed {
                            (k + 1) as f64
                        } else {
                            dp.values[dp.index(k + 1, b - used, next)]
                        };
                        for i in 0..n {
                            cursor[i] += 1;
                            if cursor[i] < agent_rows[i].len() {
                                continue 'outer;
                            }
                            cursor[i] = 0;
                        }
                        break;
                    }
                    if total > best + 1e-12 {
                        best = total;
                        best_mask = mask;
                    }
                }
                let i = dp.index(k, b, s);
                dp.values[i] = best;
                dp.actions[i] = best_mask;
            }
        }
    }
    Ok(dp)
}

/// Fleet policy that follows the DP's optimal actions.
#[derive(Debug, Clone)]
pub struct DpPolicy {
    pub dp: ExactDp,
}

impl FleetPolicy for DpPolicy {
    fn act(&mut self, view: &FleetView<'_>, _: &mut dyn RngCore) -> Vec<usize> {
        let b = view.residual_budget.min(self.dp.budget);
        self.dp.action(view.step, view.ci, b).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent_kernel::toy::{kernel_from, unit_decay};
    use crate::agent_kernel::{build_kernel, WeibullParams};
    use crate::env::{FleetEnv, NoopPolicy, RewardConfig};
    use rand::SeedableRng;
    use std::sync::Arc;

    fn weibull(k: f64, l: f64) -> KernelRef {
        Arc::new(build_kernel(&WeibullParams::new(k, l).unwrap()).unwrap())
    }

    fn drop_by(d: usize) -> KernelRef {
        Arc::new(kernel_from(move |h| vec![(h.saturating_sub(d), 1.0)]))
    }

    #[test]
    fn auction_examples() {
        let w = AuctionWeights::default();
        assert!(auction_policy(&[100, 100, 100], 10, 3, w).is_empty());
        assert_eq!(auction_policy(&[10, 90, 50], 10, 2, w), vec![0, 2]);
        assert_eq!(auction_policy(&[10, 20, 30], 1, 3, w), vec![0]);
        assert!(auction_policy(&[10, 20, 30], 0, 3, w).is_empty());
        // Equal bids resolve toward the lower index.
        assert_eq!(auction_policy(&[40, 40, 40], 10, 2, w), vec![0, 1]);
    }

    #[test]
    fn ga_single_agent_repairs_failing_agent() {
        let kernels = vec![weibull(3.0, 30.0)];
        let fitness = GaFitness::new(&[10], &kernels);
        assert!(fitness.eval(&[true]) > fitness.eval(&[false]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(ga_policy_step(&[10], 3, 1, &kernels, &GaConfig::default(), &mut rng), vec![0]);
        assert!(ga_policy_step(&[10], 0, 1, &kernels, &GaConfig::default(), &mut rng).is_empty());
    }

    #[test]
    fn ga_without_variation_keeps_uniform_population() {
        let kernels = vec![weibull(2.0, 40.0); 5];
        let fitness = GaFitness::new(&[30, 60, 90, 20, 50], &kernels);
        let genome = vec![true, false, false, true, false];
        let cfg = GaConfig {
            crossover_rate: 0.0,
            mutation_rate: 0.0,
            ..GaConfig::default()
        };
        let out = ga_evolve(vec![genome.clone(); 8], &fitness, 3, &cfg, &mut ChaCha8Rng::seed_from_u64(2));
        assert!(out.population.iter().all(|g| *g == genome));
    }

    #[test]
    fn ga_elitism_and_limit() {
        let kernels: Vec<KernelRef> = (0..12).map(|i| weibull(1.0 + i as f64 * 0.5, 30.0 + i as f64 * 3.0)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..20 {
            let ci: Vec<usize> = (0..12).map(|_| rng.random_range(1..=100)).collect();
            let fitness = GaFitness::new(&ci, &kernels);
            let limit = trial % 5;
            let population = (0..16).map(|_| (0..12).map(|_| rng.random::<bool>()).collect()).collect();
            let out = ga_evolve(population, &fitness, limit, &GaConfig::default(), &mut rng);
            assert!(out.best_fitness.windows(2).all(|w| w[1] >= w[0]));
            assert!(out.population.iter().all(|g| g.iter().filter(|b| **b).count() <= limit));
            let set = ga_policy_step(&ci, 2, 4, &kernels, &GaConfig::default(), &mut rng);
            assert!(set.len() <= 2);
        }
    }

    #[test]
    fn dp_deterministic_chain() {
        // CI 30, drop 10 per step: the lone repair is best spent at CI 10,
        // after which the agent lasts 10 more steps: t_abs = 3 + 10.
        let k = drop_by(10);
        let dp = exact_dp_value(std::slice::from_ref(&k), 1, 1, 20, 10).unwrap();
        assert_eq!(dp.value(&[30], 1), Some(13.0));
        assert_eq!(dp.value(&[30], 0), Some(3.0));
        assert_eq!(dp.action(0, &[30], 1), Some(vec![]));
        assert_eq!(dp.action(2, &[10], 1), Some(vec![0]));
        // Unit decay from CI 3 on the fine grid: one repair covers H = 20.
        let dp = exact_dp_value(&[Arc::new(unit_decay())], 1, 1, 20, 1).unwrap();
        assert_eq!(dp.value(&[3], 1), Some(20.0));
        assert_eq!(dp.value(&[3], 0), Some(3.0));
    }

    #[test]
    fn dp_rejects_large_instances() {
        let k = drop_by(10);
        assert!(exact_dp_value(&vec![k.clone(); 3], 1, 1, 10, 10).is_err());
        assert!(exact_dp_value(std::slice::from_ref(&k), 1, 6, 10, 10).is_err());
        assert!(exact_dp_value(std::slice::from_ref(&k), 1, 1, 21, 10).is_err());
        assert!(matches!(
            exact_dp_value(&[weibull(2.0, 40.0)], 1, 1, 10, 10),
            Err(BaselineError::OffGrid { .. })
        ));
    }

    #[test]
    fn dp_budget_zero_matches_noop_monte_carlo() {
        let kernels: Vec<KernelRef> = vec![
            Arc::new(build_kernel(&WeibullParams::new(2.0, 30.0).unwrap()).unwrap().coarsened(10).unwrap()),
            Arc::new(build_kernel(&WeibullParams::new(5.0, 60.0).unwrap()).unwrap().coarsened(10).unwrap()),
        ];
        let dp = exact_dp_value(&kernels, 1, 0, 20, 10).unwrap();
        let exact = dp.value(&[100, 100], 0).unwrap();
        let reward = RewardConfig {
            horizon: 20,
            ..RewardConfig::default()
        };
        let env = FleetEnv::new(kernels, 0, 1, reward).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let runs = 20_000;
        let samples: Vec<f64> = (0..runs)
            .map(|_| env.run_episode(&mut NoopPolicy, &mut rng).t_abs as f64)
            .collect();
        let mean = samples.iter().sum::<f64>() / runs as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
        let se = (var / runs as f64).sqrt();
        assert!((mean - exact).abs() <= 2.0 * se.max(1e-12), "mc {mean} dp {exact} se {se}");
    }

    #[test]
    fn dp_dominates_auction() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let kernels: Vec<KernelRef> = (0..2)
                .map(|_| {
                    let p = WeibullParams::new(rng.random_range(1.0..7.0), rng.random_range(25.0..70.0)).unwrap();
                    Arc::new(build_kernel(&p).unwrap().coarsened(10).unwrap())
                })
                .collect();
            let budget = rng.random_range(0..=5);
            let dp = exact_dp_value(&kernels, 1, budget, 15, 10).unwrap();
            let value = dp.value(&[100, 100], budget).unwrap();
            let reward = RewardConfig {
                horizon: 15,
                ..RewardConfig::default()
            };
            let env = FleetEnv::new(kernels, budget, 1, reward).unwrap();
            let runs = 4000;
            let mut ep_rng = ChaCha8Rng::seed_from_u64(rng.random());
            let auction: Vec<f64> = (0..runs)
                .map(|_| env.run_episode(&mut AuctionPolicy::default(), &mut ep_rng).t_abs as f64)
                .collect();
            let mean = auction.iter().sum::<f64>() / runs as f64;
            let sd = (auction.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (runs - 1) as f64).sqrt();
            assert!(value + 2.0 * sd / (runs as f64).sqrt() >= mean, "dp {value} auction {mean}");
            // The DP's own policy achieves its value.
            let dp_runs: Vec<f64> = (0..runs)
                .map(|_| env.run_episode(&mut DpPolicy { dp: dp.clone() }, &mut ep_rng).t_abs as f64)
                .collect();
            let dp_mean = dp_runs.iter().sum::<f64>() / runs as f64;
            let dp_sd = (dp_runs.iter().map(|x| (x - dp_mean).powi(2)).sum::<f64>() / (runs - 1) as f64).sqrt();
            assert!((dp_mean - value).abs() <= 4.0 * dp_sd / (runs as f64).sqrt() + 1e-9);
        }
    }

    #[test]
    fn vanilla_ppo_smoke_and_masking() {
        let kernels = vec![weibull(2.0, 40.0), weibull(4.0, 60.0)];
        let task = FleetTask {
            kernels: kernels.clone(),
            budget: 5,
            capacity: 1,
        };
        let cfg = PpoConfig {
            hidden: 16,
            episodes_per_iteration: 8,
            meta_iterations: 4,
            seed: 9,
            ..PpoConfig::default()
        };
        let a = vanilla_ppo_train(&task, &cfg).unwrap();
        let b = vanilla_ppo_train(&task, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        let env = FleetEnv::new(kernels, 5, 1, cfg.reward).unwrap();
        let mut policy = VanillaPpoPolicy {
            params: a.params,
            selection: ActionSelection::Sample,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let rec = env.run_episode(&mut policy, &mut rng);
            assert!(!rec.violated_budget && !rec.violated_capacity);
            assert!(rec.repairs_used <= 5);
        }
    }
}
