//! Clipped-surrogate PPO with generalized advantage estimation, and the
//! meta-training / fine-tuning / composition workflow built on it.
//!
//! A single network is trained over many `(group, budget)` tasks drawn from a
//! [`TaskSampler`]. At deployment the network is cloned per group, fine-tuned
//! on that group's own task for a few PPO iterations, and the clones are
//! composed into a joint fleet policy.
//!
//! Networks are sized for a fixed number of agent *slots*; smaller groups are
//! padded with healthy phantom agents whose repair actions are masked.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{
    encode_state_into, step, ActionIndex, ComposedPolicy, EnvError, EpisodeRecord, FleetState, GroupPolicy,
    KernelRef, RewardConfig,
};
use crate::nn::{AdamConfig, ForwardCache, NetShape, NnError, PolicyParams, DEFAULT_HIDDEN};
use crate::partition::PartitionSpec;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("invalid PPO config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at iteration {iteration}: {diagnostics:?}")]
    Diverged {
        iteration: usize,
        diagnostics: UpdateDiagnostics,
        last_good: Box<PolicyParams>,
    },
    #[error("non-finite loss during update: {0:?}")]
    NonFiniteLoss(UpdateDiagnostics),
    #[error("expected {expected} policies, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("group of {group} agents does not fit a network with {slots} slots")]
    TooManyAgents { group: usize, slots: usize },
}

/// Derive an independent RNG stream from a base seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub epochs_per_batch: usize,
    pub minibatch_size: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub adam: AdamConfig,
    pub hidden: usize,
    /// Episodes collected per PPO iteration.
    pub episodes_per_iteration: usize,
    pub meta_iterations: usize,
    /// PPO iterations run on a single group when fine-tuning.
    pub finetune_steps: usize,
    pub reward: RewardConfig,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            epochs_per_batch: 4,
            minibatch_size: 64,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            adam: AdamConfig::default(),
            hidden: DEFAULT_HIDDEN,
            episodes_per_iteration: 32,
            meta_iterations: 600,
            finetune_steps: 10,
            reward: RewardConfig::default(),
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return bad("gamma and gae_lambda must lie in (0, 1]");
        }
        if self.epochs_per_batch == 0 || self.minibatch_size == 0 || self.episodes_per_iteration == 0 || self.hidden == 0 {
            return bad("counts must be at least 1");
        }
        self.reward.validate()?;
        Ok(())
    }

    /// Rewards are divided by the horizon before advantage estimation.
    pub fn reward_scale(&self) -> f64 {
        1.0 / self.reward.horizon as f64
    }

    /// Network shape for groups of up to `slots` agents.
    pub fn net_shape(&self, slots: usize) -> NetShape {
        NetShape {
            input: 2 * slots,
            hidden: self.hidden,
            actions: slots + 1,
        }
    }
}

/// Flat storage of transitions for one PPO update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryBatch {
    pub input_dim: usize,
    pub num_actions: usize,
    pub observations: Vec<f64>,
    pub masks: Vec<bool>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl TrajectoryBatch {
    pub fn new(input_dim: usize, num_actions: usize) -> Self {
        Self {
            input_dim,
            num_actions,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn observation(&self, i: usize) -> &[f64] {
        &self.observations[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn mask(&self, i: usize) -> &[bool] {
        &self.masks[i * self.num_actions..(i + 1) * self.num_actions]
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(&mut self, obs: &[f64], mask: &[bool], action: usize, log_prob: f64, reward: f64, value: f64, done: bool) {
        debug_assert_eq!(obs.len(), self.input_dim);
        debug_assert_eq!(mask.len(), self.num_actions);
        self.observations.extend_from_slice(obs);
        self.masks.extend_from_slice(mask);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
        self.dones.push(done);
    }

    /// Fill advantages and returns for a trajectory segment; `last_value`
    /// bootstraps a segment that was cut without a terminal flag.
    pub fn finish_segment(&mut self, start: usize, last_value: f64, gamma: f64, lambda: f64) {
        let (adv, ret) = compute_gae(
            &self.rewards[start..],
            &self.values[start..],
            &self.dones[start..],
            last_value,
            gamma,
            lambda,
        );
        self.advantages.truncate(start);
        self.returns.truncate(start);
        self.advantages.extend(adv);
        self.returns.extend(ret);
    }

    pub fn append(&mut self, other: TrajectoryBatch) {
        debug_assert_eq!(self.input_dim, other.input_dim);
        self.observations.extend(other.observations);
        self.masks.extend(other.masks);
        self.actions.extend(other.actions);
        self.log_probs.extend(other.log_probs);
        self.rewards.extend(other.rewards);
        self.values.extend(other.values);
        self.dones.extend(other.dones);
        self.advantages.extend(other.advantages);
        self.returns.extend(other.returns);
    }

    /// Shift and scale advantages to zero mean and unit (population) std.
    pub fn normalize_advantages(&mut self) {
        let n = self.advantages.len();
        if n < 2 {
            return;
        }
        let mean = self.advantages.iter().sum::<f64>() / n as f64;
        let var = self.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt().max(1e-8);
        self.advantages.iter_mut().for_each(|a| *a = (*a - mean) / std);
    }
}

/// `delta_t = r_t + gamma v_{t+1} (1 - done_t) - v_t`,
/// `A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}`, returns `A + v`.
/// `v_{T}` is `last_value`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Loss terms and training-health statistics of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

impl UpdateDiagnostics {
    fn is_finite(&self) -> bool {
        self.policy_loss.is_finite() && self.value_loss.is_finite() && self.entropy.is_finite()
    }
}

/// Per-sample clipped surrogate `min(rho A, clip(rho, 1 - eps, 1 + eps) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    (ratio * advantage).min(clipped * advantage)
}

/// Mean clipped surrogate of the current network on a batch.
pub fn surrogate_objective(params: &PolicyParams, batch: &TrajectoryBatch, clip_eps: f64) -> Result<f64, TrainError> {
    let mut cache = ForwardCache::default();
    let mut total = 0.0;
    for i in 0..batch.len() {
        params.net.forward_cached(batch.observation(i), Some(batch.mask(i)), &mut cache)?;
        let ratio = (cache.log_probs[batch.actions[i]] - batch.log_probs[i]).exp();
        total += clipped_surrogate(ratio, batch.advantages[i], clip_eps);
    }
    Ok(total / batch.len().max(1) as f64)
}

/// Gradient of the minibatch loss
/// `-mean(surrogate) + c_v mean((V - R)^2) - c_e mean(H)`
/// accumulated into `grad`; returns the (policy, value, entropy, kl, clip)
/// sums over the minibatch.
fn minibatch_gradient(
    params: &PolicyParams,
    batch: &TrajectoryBatch,
    indices: &[usize],
    cfg: &PpoConfig,
    grad: &mut [f64],
    cache: &mut ForwardCache,
) -> Result<[f64; 5], TrainError> {
    let scale = 1.0 / indices.len() as f64;
    let actions = batch.num_actions;
    let mut d_logits = vec![0.0; actions];
    let mut sums = [0.0; 5];
    for &i in indices {
        params.net.forward_cached(batch.observation(i), Some(batch.mask(i)), cache)?;
        let a = batch.actions[i];
        let logp = cache.log_probs[a];
        let ratio = (logp - batch.log_probs[i]).exp();
        let adv = batch.advantages[i];
        let surr_raw = ratio * adv;
        let surr_clip = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv;
        let entropy: f64 = cache
            .probs
            .iter()
            .zip(&cache.log_probs)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, lp)| -p * lp)
            .sum();
        let value_err = cache.value - batch.returns[i];

        sums[0] -= surr_raw.min(surr_clip);
        sums[1] += value_err * value_err;
        sums[2] += entropy;
        sums[3] += (ratio - 1.0) - (logp - batch.log_probs[i]);
        if (ratio - 1.0).abs() > cfg.clip_eps {
            sums[4] += 1.0;
        }

        // d(-surrogate)/d logp is -rho A on the unclipped branch, else 0.
        let d_logp = if surr_raw <= surr_clip { -ratio * adv * scale } else { 0.0 };
        for j in 0..actions {
            let p = cache.probs[j];
            let onehot = if j == a { 1.0 } else { 0.0 };
            let mut g = d_logp * (onehot - p);
            if p > 0.0 {
                // d(-c_e H)/d logit_j = c_e p_j (log p_j + H)
                g += cfg.entropy_coef * scale * p * (cache.log_probs[j] + entropy);
            }
            d_logits[j] = g;
        }
        let d_value = 2.0 * cfg.value_coef * value_err * scale;
        params.net.backward(cache, &d_logits, d_value, grad);
    }
    Ok(sums)
}

/// Several epochs of minibatch clipped-PPO updates on one batch.
pub fn ppo_update<R: Rng + ?Sized>(
    params: &mut PolicyParams,
    batch: &TrajectoryBatch,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateDiagnostics, TrainError> {
    let n = batch.len();
    if n == 0 {
        return Ok(UpdateDiagnostics::default());
    }
    let mut grad = vec![0.0; params.net.num_params()];
    let mut cache = ForwardCache::default();
    let mut order: Vec<usize> = (0..n).collect();
    let mut totals = [0.0; 5];
    let mut seen = 0usize;
    for _ in 0..cfg.epochs_per_batch {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let sums = minibatch_gradient(params, batch, chunk, cfg, &mut grad, &mut cache)?;
            for (t, s) in totals.iter_mut().zip(sums) {
                *t += s;
            }
            seen += chunk.len();
            let running = diagnostics_from(&totals, seen);
            if !running.is_finite() {
                return Err(TrainError::NonFiniteLoss(running));
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > cfg.max_grad_norm && cfg.max_grad_norm > 0.0 {
                let s = cfg.max_grad_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            params.optimizer.step(&mut params.net.params, &grad, &cfg.adam)?;
        }
    }
    Ok(diagnostics_from(&totals, seen))
}

fn diagnostics_from(totals: &[f64; 5], seen: usize) -> UpdateDiagnostics {
    let n = seen.max(1) as f64;
    UpdateDiagnostics {
        policy_loss: totals[0] / n,
        value_loss: totals[1] / n,
        entropy: totals[2] / n,
        approx_kl: totals[3] / n,
        clip_fraction: totals[4] / n,
    }
}

/// One training environment: the agents of a group and its budget.
#[derive(Debug, Clone)]
pub struct GroupTask {
    pub kernels: Vec<KernelRef>,
    pub budget: u32,
}

/// Distribution over group tasks used for meta-training.
pub trait TaskSampler: Sync {
    /// Largest group the sampler produces; fixes the network width.
    fn slots(&self) -> usize;
    fn sample(&self, rng: &mut dyn RngCore) -> GroupTask;
}

/// Groups drawn from a pool of agent kernels. Group sizes follow `sizes`
/// (one entry per group of the target partition) and budgets are the
/// proportional share `B m / n` scaled by a uniform factor in
/// `budget_factor`.
#[derive(Debug, Clone)]
pub struct PoolSampler {
    pub pool: Vec<KernelRef>,
    pub sizes: Vec<usize>,
    pub budget_per_agent: f64,
    pub budget_factor: (f64, f64),
}

impl TaskSampler for PoolSampler {
    fn slots(&self) -> usize {
        self.sizes.iter().copied().max().unwrap_or(1)
    }

    fn sample(&self, rng: &mut dyn RngCore) -> GroupTask {
        let m = self.sizes[rng.random_range(0..self.sizes.len())];
        let kernels = (0..m)
            .map(|_| self.pool[rng.random_range(0..self.pool.len())].clone())
            .collect();
        let (lo, hi) = self.budget_factor;
        let factor = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let budget = (self.budget_per_agent * m as f64 * factor).round().max(0.0) as u32;
        GroupTask { kernels, budget }
    }
}

/// Always returns the same task.
impl TaskSampler for GroupTask {
    fn slots(&self) -> usize {
        self.kernels.len()
    }

    fn sample(&self, _: &mut dyn RngCore) -> GroupTask {
        self.clone()
    }
}

/// How a network picks an action outside training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActionSelection {
    #[default]
    Greedy,
    Sample,
}

/// Group policy backed by a network.
#[derive(Debug, Clone)]
pub struct NetPolicy {
    pub params: PolicyParams,
    pub selection: ActionSelection,
    /// Mask repairs once the group's budget is spent.
    pub mask_budget: bool,
    slots: usize,
    obs: Vec<f64>,
    mask: Vec<bool>,
    cache: ForwardCache,
}

impl NetPolicy {
    pub fn new(params: PolicyParams, selection: ActionSelection) -> Self {
        let slots = params.net.shape.actions - 1;
        Self {
            params,
            selection,
            mask_budget: true,
            slots,
            obs: Vec::new(),
            mask: Vec::new(),
            cache: ForwardCache::default(),
        }
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    fn evaluate(&mut self, state: &FleetState, initial_budget: u32, mask_budget: bool) -> Result<(), TrainError> {
        let m = state.ci.len();
        if m > self.slots {
            return Err(TrainError::TooManyAgents { group: m, slots: self.slots });
        }
        encode_state_into(state, initial_budget, self.slots, &mut self.obs);
        fill_mask(&mut self.mask, m, self.slots, !mask_budget || state.residual_budget > 0);
        self.params
            .net
            .forward_cached(&self.obs, Some(&self.mask), &mut self.cache)?;
        Ok(())
    }
}

fn fill_mask(mask: &mut Vec<bool>, agents: usize, slots: usize, repairs_allowed: bool) {
    mask.clear();
    mask.push(true);
    mask.extend((0..slots).map(|i| repairs_allowed && i < agents));
}

pub(crate) fn sample_index(probs: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

pub(crate) fn argmax(probs: &[f64]) -> usize {
    probs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
        .0
}

impl GroupPolicy for NetPolicy {
    fn act(&mut self, state: &FleetState, initial_budget: u32, rng: &mut dyn RngCore) -> ActionIndex {
        let mask_budget = self.mask_budget;
        self.evaluate(state, initial_budget, mask_budget)
            .expect("group fits the network and the mask keeps NOOP");
        ActionIndex(match self.selection {
            ActionSelection::Greedy => argmax(&self.cache.probs),
            ActionSelection::Sample => sample_index(&self.cache.probs, rng),
        })
    }
}

/// One collected training episode: its transitions (with advantages
/// filled) and its unscaled outcome.
#[derive(Debug, Clone)]
pub struct CollectedEpisode {
    pub batch: TrajectoryBatch,
    pub record: EpisodeRecord,
}

/// Roll out the stochastic policy on a task, recording transitions.
fn collect_episode(
    params: &PolicyParams,
    task: &GroupTask,
    cfg: &PpoConfig,
    rng: &mut dyn RngCore,
) -> Result<CollectedEpisode, TrainError> {
    let slots = params.net.shape.actions - 1;
    let m = task.kernels.len();
    if m > slots {
        return Err(TrainError::TooManyAgents { group: m, slots });
    }
    let mut batch = TrajectoryBatch::new(params.net.shape.input, params.net.shape.actions);
    let mut state = FleetState::fresh(m, task.budget);
    let mut obs = Vec::new();
    let mut mask = Vec::new();
    let mut cache = ForwardCache::default();
    let mut record = EpisodeRecord {
        t_abs: cfg.reward.horizon,
        repairs_used: 0,
        total_reward: 0.0,
        violated_budget: false,
        violated_capacity: false,
    };
    let scale = cfg.reward_scale();
    loop {
        encode_state_into(&state, task.budget, slots, &mut obs);
        fill_mask(&mut mask, m, slots, true);
        params.net.forward_cached(&obs, Some(&mask), &mut cache)?;
        let action = sample_index(&cache.probs, rng);
        let out = step(&state, ActionIndex(action), &task.kernels, &cfg.reward, rng)?;
        record.total_reward += out.reward;
        batch.push(&obs, &mask, action, cache.log_probs[action], out.reward * scale, cache.value, out.done);
        if out.violated_budget {
            record.violated_budget = true;
            record.t_abs = state.step;
            break;
        }
        if action > 0 {
            record.repairs_used += 1;
        }
        state = out.state;
        if out.failed {
            record.t_abs = state.step;
        }
        if out.done {
            break;
        }
    }
    batch.finish_segment(0, 0.0, cfg.gamma, cfg.gae_lambda);
    Ok(CollectedEpisode { batch, record })
}

/// Per-iteration training log entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub mean_reward: f64,
    pub mean_t_abs: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Collect a batch of episodes (in parallel) and apply one PPO update.
fn train_iteration<F>(
    params: &mut PolicyParams,
    collect: &F,
    cfg: &PpoConfig,
    seed: u64,
    iteration: usize,
) -> Result<IterationStats, TrainError>
where
    F: Fn(&PolicyParams, &mut ChaCha8Rng) -> Result<CollectedEpisode, TrainError> + Sync,
{
    let base = iteration as u64 * (cfg.episodes_per_iteration as u64 + 1);
    let frozen = &*params;
    let episodes: Vec<CollectedEpisode> = (0..cfg.episodes_per_iteration)
        .into_par_iter()
        .map(|e| collect(frozen, &mut stream_rng(seed, base + e as u64)))
        .collect::<Result<_, _>>()?;
    let mut batch = TrajectoryBatch::new(params.net.shape.input, params.net.shape.actions);
    let (mut reward, mut t_abs) = (0.0, 0.0);
    for ep in episodes {
        reward += ep.record.total_reward;
        t_abs += ep.record.t_abs as f64;
        batch.append(ep.batch);
    }
    if cfg.normalize_advantages {
        batch.normalize_advantages();
    }
    let mut rng = stream_rng(seed, base + cfg.episodes_per_iteration as u64);
    let diag = ppo_update(params, &batch, cfg, &mut rng)?;
    let e = cfg.episodes_per_iteration as f64;
    Ok(IterationStats {
        iteration,
        mean_reward: reward / e,
        mean_t_abs: t_abs / e,
        policy_loss: diag.policy_loss,
        value_loss: diag.value_loss,
        entropy: diag.entropy,
        approx_kl: diag.approx_kl,
        clip_fraction: diag.clip_fraction,
    })
}

/// Alternate parallel episode collection and serial PPO updates.
///
/// `collect` must produce one episode from the frozen parameters using only
/// the supplied RNG, which makes the run a function of `seed`. A non-finite
/// loss aborts with the parameters from before the failing iteration.
pub fn train_loop<F>(
    mut params: PolicyParams,
    cfg: &PpoConfig,
    seed: u64,
    iterations: usize,
    collect: F,
) -> Result<(PolicyParams, Vec<IterationStats>), TrainError>
where
    F: Fn(&PolicyParams, &mut ChaCha8Rng) -> Result<CollectedEpisode, TrainError> + Sync,
{
    let mut history = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let last_good = params.clone();
        match train_iteration(&mut params, &collect, cfg, seed, it) {
            Ok(stats) => history.push(stats),
            Err(TrainError::NonFiniteLoss(diagnostics)) => {
                return Err(TrainError::Diverged {
                    iteration: it,
                    diagnostics,
                    last_good: Box::new(last_good),
                })
            }
            Err(TrainError::Nn(NnError::NonFiniteGradient(_))) => {
                return Err(TrainError::Diverged {
                    iteration: it,
                    diagnostics: UpdateDiagnostics {
                        policy_loss: f64::NAN,
                        ..Default::default()
                    },
                    last_good: Box::new(last_good),
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok((params, history))
}

fn run_iterations(
    params: PolicyParams,
    sampler: &dyn TaskSampler,
    cfg: &PpoConfig,
    seed: u64,
    iterations: usize,
) -> Result<(PolicyParams, Vec<IterationStats>), TrainError> {
    train_loop(params, cfg, seed, iterations, |p, rng| {
        let task = sampler.sample(rng);
        collect_episode(p, &task, cfg, rng)
    })
}

/// Result of meta-training: final parameters and the per-iteration log.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: PolicyParams,
    pub history: Vec<IterationStats>,
}

/// Fresh parameters for a sampler's slot count.
pub fn init_params(slots: usize, cfg: &PpoConfig) -> PolicyParams {
    let mut rng = stream_rng(cfg.seed, u64::MAX);
    PolicyParams::new(cfg.net_shape(slots), cfg.reward_scale(), &mut rng)
}

/// Train one shared network over tasks drawn from `sampler`.
pub fn meta_train(sampler: &dyn TaskSampler, cfg: &PpoConfig) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    let params = init_params(sampler.slots(), cfg);
    let (params, history) = run_iterations(params, sampler, cfg, cfg.seed, cfg.meta_iterations)?;
    Ok(TrainOutput { params, history })
}

/// Continue training a clone of `params` on a single group task.
pub fn finetune(params: &PolicyParams, task: &GroupTask, cfg: &PpoConfig) -> Result<PolicyParams, TrainError> {
    cfg.validate()?;
    let slots = params.net.shape.actions - 1;
    if task.kernels.len() > slots {
        return Err(TrainError::TooManyAgents {
            group: task.kernels.len(),
            slots,
        });
    }
    let seed = cfg.seed ^ 0x9e37_79b9_7f4a_7c15;
    Ok(run_iterations(params.clone(), task, cfg, seed, cfg.finetune_steps)?.0)
}

/// Joint fleet policy from one fine-tuned network per group.
pub fn compose(
    policies: Vec<PolicyParams>,
    spec: &PartitionSpec,
    selection: ActionSelection,
) -> Result<ComposedPolicy<NetPolicy>, TrainError> {
    if policies.len() != spec.num_groups() {
        return Err(TrainError::ArityMismatch {
            expected: spec.num_groups(),
            got: policies.len(),
        });
    }
    let nets = policies
        .into_iter()
        .zip(&spec.groups)
        .map(|(p, g)| {
            let net = NetPolicy::new(p, selection);
            if g.len() > net.slots() {
                Err(TrainError::TooManyAgents {
                    group: g.len(),
                    slots: net.slots(),
                })
            } else {
                Ok(net)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ComposedPolicy::new(nets, spec)?)
}

/// Evaluate a network on a single group task over `episodes` seeded runs.
pub fn evaluate_group(
    params: &PolicyParams,
    task: &GroupTask,
    cfg: &RewardConfig,
    selection: ActionSelection,
    episodes: usize,
    seed: u64,
) -> Result<Vec<EpisodeRecord>, TrainError> {
    (0..episodes)
        .into_par_iter()
        .map(|e| {
            let mut policy = NetPolicy::new(params.clone(), selection);
            let mut rng = stream_rng(seed, e as u64);
            Ok(crate::env::rollout(&mut policy, &task.kernels, task.budget, cfg, &mut rng)?)
        })
        .collect()
}
