//! Fleet simulator.
//!
//! Two views of the same dynamics:
//!
//! * the capacity-1 *group* sub-MDP used for training, with `m + 1` actions
//!   (NOOP or repair one agent) and the shaped reward;
//! * the *fleet* simulator used for evaluation, where a policy emits a set of
//!   agents to repair each step and the simulator instruments the budget and
//!   capacity constraints.
//!
//! Within a step the repair is applied first (the agent is reset to CI 100
//! and does not deteriorate this step), then every other agent takes one idle
//! draw. The episode ends when any agent reaches CI 0 or after `horizon`
//! steps.

use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent_kernel::{DeteriorationKernel, CI_MAX};
use crate::partition::PartitionSpec;

pub type KernelRef = Arc<DeteriorationKernel>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("episode already terminated")]
    Terminated,
    #[error("action {action} out of range for a group of {agents} agents")]
    InvalidAction { action: usize, agents: usize },
    #[error("expected {expected} group policies, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
    #[error("state has {ci} agents but {kernels} kernels")]
    KernelMismatch { ci: usize, kernels: usize },
}

/// Reward shaping constants and the episode horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Penalty for a repair attempted with no budget left.
    pub r1: f64,
    /// Weight of the CI-at-repair offset.
    pub alpha: f64,
    pub horizon: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            r1: -200.0,
            alpha: 0.01,
            horizon: 100,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.r1 < 0.0) {
            return Err(EnvError::InvalidConfig(format!("r1 = {} must be negative", self.r1)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(EnvError::InvalidConfig(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        if self.horizon == 0 {
            return Err(EnvError::InvalidConfig("horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// Condition indices of a group (or fleet), residual budget, and step index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FleetState {
    pub ci: Vec<usize>,
    pub residual_budget: u32,
    pub step: usize,
}

impl FleetState {
    /// Every agent at full condition.
    pub fn fresh(agents: usize, budget: u32) -> Self {
        Self {
            ci: vec![CI_MAX; agents],
            residual_budget: budget,
            step: 0,
        }
    }

    pub fn any_failed(&self) -> bool {
        self.ci.contains(&0)
    }
}

/// Group action: 0 is NOOP, `i >= 1` repairs local agent `i - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionIndex(pub usize);

impl ActionIndex {
    pub const NOOP: ActionIndex = ActionIndex(0);

    pub fn repair(local: usize) -> Self {
        ActionIndex(local + 1)
    }

    pub fn repaired_agent(self) -> Option<usize> {
        self.0.checked_sub(1)
    }
}

/// Per-episode summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// First step at which some agent reached CI 0, or the horizon.
    pub t_abs: usize,
    pub repairs_used: u32,
    pub total_reward: f64,
    pub violated_budget: bool,
    pub violated_capacity: bool,
}

/// Observation layout: `m` CI values scaled to `[0, 1]`, then `m` copies of
/// the residual budget as a fraction of the group's initial budget (0 when
/// the initial budget is 0).
pub fn encode_state(state: &FleetState, initial_budget: u32) -> Vec<f64> {
    let m = state.ci.len();
    let mut obs = Vec::with_capacity(2 * m);
    encode_state_into(state, initial_budget, m, &mut obs);
    obs
}

/// As [`encode_state`], padded to `slots` agents. Padding slots read as
/// healthy agents (CI 1.0); the caller masks their actions.
pub fn encode_state_into(state: &FleetState, initial_budget: u32, slots: usize, out: &mut Vec<f64>) {
    let m = state.ci.len();
    debug_assert!(slots >= m);
    out.clear();
    out.extend(state.ci.iter().map(|&c| c as f64 / CI_MAX as f64));
    out.extend(std::iter::repeat_n(1.0, slots - m));
    let frac = budget_fraction(state.residual_budget, initial_budget);
    out.extend(std::iter::repeat_n(frac, slots));
}

fn budget_fraction(residual: u32, initial: u32) -> f64 {
    if initial == 0 {
        0.0
    } else {
        residual as f64 / initial as f64
    }
}

/// Recover `(m, budget fraction)` from an encoded observation.
pub fn decode_metadata(obs: &[f64]) -> (usize, f64) {
    let m = obs.len() / 2;
    (m, if m == 0 { 0.0 } else { obs[m] })
}

/// Outcome of one group transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: FleetState,
    pub reward: f64,
    pub done: bool,
    pub failed: bool,
    pub violated_budget: bool,
}

/// One transition of the capacity-1 group sub-MDP.
///
/// Reward cases, first match wins:
/// 1. repair with no residual budget: `r1`, episode ends, no transition;
/// 2. some agent reaches CI 0: `-(H - k)`, episode ends;
/// 3. committed repair of agent `i`: `k - alpha * ci[i]` (CI before repair);
/// 4. NOOP: `k`.
pub fn step<R: Rng + ?Sized>(
    state: &FleetState,
    action: ActionIndex,
    kernels: &[KernelRef],
    cfg: &RewardConfig,
    rng: &mut R,
) -> Result<StepResult, EnvError> {
    let m = state.ci.len();
    if kernels.len() != m {
        return Err(EnvError::KernelMismatch { ci: m, kernels: kernels.len() });
    }
    if state.step >= cfg.horizon || state.any_failed() {
        return Err(EnvError::Terminated);
    }
    if action.0 > m {
        return Err(EnvError::InvalidAction { action: action.0, agents: m });
    }
    let k = state.step as f64;
    let repaired = action.repaired_agent();

    if repaired.is_some() && state.residual_budget == 0 {
        return Ok(StepResult {
            state: state.clone(),
            reward: cfg.r1,
            done: true,
            failed: false,
            violated_budget: true,
        });
    }

    let mut next = state.clone();
    next.step += 1;
    for (i, ci) in next.ci.iter_mut().enumerate() {
        if Some(i) == repaired {
            *ci = CI_MAX;
        } else {
            *ci = kernels[i].sample_idle_step(*ci, rng);
        }
    }
    if repaired.is_some() {
        next.residual_budget -= 1;
    }

    let failed = next.any_failed();
    let reward = if failed {
        -((cfg.horizon - state.step) as f64)
    } else if let Some(i) = repaired {
        k - cfg.alpha * state.ci[i] as f64
    } else {
        k
    };
    let done = failed || next.step >= cfg.horizon;
    Ok(StepResult {
        state: next,
        reward,
        done,
        failed,
        violated_budget: false,
    })
}

/// Decision rule for a capacity-1 group.
pub trait GroupPolicy {
    fn act(&mut self, state: &FleetState, initial_budget: u32, rng: &mut dyn RngCore) -> ActionIndex;
}

impl<F> GroupPolicy for F
where
    F: FnMut(&FleetState, u32) -> ActionIndex,
{
    fn act(&mut self, state: &FleetState, initial_budget: u32, _rng: &mut dyn RngCore) -> ActionIndex {
        self(state, initial_budget)
    }
}

/// Always idle.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoopPolicy;

impl GroupPolicy for NoopPolicy {
    fn act(&mut self, _: &FleetState, _: u32, _: &mut dyn RngCore) -> ActionIndex {
        ActionIndex::NOOP
    }
}

/// Run one group episode from all-healthy agents.
pub fn rollout<P: GroupPolicy + ?Sized>(
    policy: &mut P,
    kernels: &[KernelRef],
    budget: u32,
    cfg: &RewardConfig,
    rng: &mut dyn RngCore,
) -> Result<EpisodeRecord, EnvError> {
    rollout_from(policy, FleetState::fresh(kernels.len(), budget), budget, kernels, cfg, rng)
}

/// Run one group episode from an arbitrary start state.
pub fn rollout_from<P: GroupPolicy + ?Sized>(
    policy: &mut P,
    start: FleetState,
    initial_budget: u32,
    kernels: &[KernelRef],
    cfg: &RewardConfig,
    rng: &mut dyn RngCore,
) -> Result<EpisodeRecord, EnvError> {
    cfg.validate()?;
    let mut state = start;
    let mut record = EpisodeRecord {
        t_abs: cfg.horizon,
        repairs_used: 0,
        total_reward: 0.0,
        violated_budget: false,
        violated_capacity: false,
    };
    if state.any_failed() {
        record.t_abs = state.step;
        return Ok(record);
    }
    while state.step < cfg.horizon {
        let action = policy.act(&state, initial_budget, rng);
        let out = step(&state, action, kernels, cfg, rng)?;
        record.total_reward += out.reward;
        if out.violated_budget {
            record.violated_budget = true;
            record.t_abs = state.step;
            break;
        }
        if action.repaired_agent().is_some() {
            record.repairs_used += 1;
        }
        state = out.state;
        if out.failed {
            record.t_abs = state.step;
            break;
        }
    }
    Ok(record)
}

/// What a fleet-level policy sees each step.
#[derive(Debug, Clone, Copy)]
pub struct FleetView<'a> {
    pub ci: &'a [usize],
    pub residual_budget: u32,
    pub initial_budget: u32,
    pub capacity: usize,
    pub step: usize,
    pub horizon: usize,
}

/// Decision rule over the whole fleet: returns agent IDs to repair.
pub trait FleetPolicy {
    /// Called before each episode.
    fn reset(&mut self) {}
    fn act(&mut self, view: &FleetView<'_>, rng: &mut dyn RngCore) -> Vec<usize>;
}

/// Fleet-level policy that never repairs.
impl FleetPolicy for NoopPolicy {
    fn act(&mut self, _: &FleetView<'_>, _: &mut dyn RngCore) -> Vec<usize> {
        Vec::new()
    }
}

/// Evaluation simulator for the whole fleet.
///
/// Requests beyond the capacity or the residual budget are flagged on the
/// episode record and truncated before they take effect.
#[derive(Debug, Clone)]
pub struct FleetEnv {
    pub kernels: Vec<KernelRef>,
    pub budget: u32,
    pub capacity: usize,
    pub reward: RewardConfig,
}

impl FleetEnv {
    pub fn new(kernels: Vec<KernelRef>, budget: u32, capacity: usize, reward: RewardConfig) -> Result<Self, EnvError> {
        reward.validate()?;
        Ok(Self {
            kernels,
            budget,
            capacity,
            reward,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.kernels.len()
    }

    /// Simulate one episode from all agents at CI 100.
    pub fn run_episode<P: FleetPolicy + ?Sized>(&self, policy: &mut P, rng: &mut dyn RngCore) -> EpisodeRecord {
        self.run_episode_from(policy, &vec![CI_MAX; self.num_agents()], rng)
    }

    pub fn run_episode_from<P: FleetPolicy + ?Sized>(
        &self,
        policy: &mut P,
        start: &[usize],
        rng: &mut dyn RngCore,
    ) -> EpisodeRecord {
        let horizon = self.reward.horizon;
        let n = self.num_agents();
        let mut ci = start.to_vec();
        let mut residual = self.budget;
        let mut record = EpisodeRecord {
            t_abs: horizon,
            repairs_used: 0,
            total_reward: 0.0,
            violated_budget: false,
            violated_capacity: false,
        };
        if ci.contains(&0) {
            record.t_abs = 0;
            return record;
        }
        policy.reset();
        for k in 0..horizon {
            let view = FleetView {
                ci: &ci,
                residual_budget: residual,
                initial_budget: self.budget,
                capacity: self.capacity,
                step: k,
                horizon,
            };
            let mut request = policy.act(&view, rng);
            request.retain(|&a| a < n);
            request.sort_unstable();
            request.dedup();
            if request.len() > self.capacity {
                record.violated_capacity = true;
                request.truncate(self.capacity);
            }
            if request.len() > residual as usize {
                record.violated_budget = true;
                request.truncate(residual as usize);
            }
            let (reward, failed) = fleet_step(&mut ci, &request, &self.kernels, &self.reward, k, rng);
            residual -= request.len() as u32;
            record.repairs_used += request.len() as u32;
            record.total_reward += reward;
            if failed {
                record.t_abs = k + 1;
                break;
            }
        }
        record
    }
}

/// Advance every agent of the fleet by one step at time `k`: agents in
/// `repairs` (distinct, in range) reset to CI 100, the rest take an idle
/// draw. Returns the fleet reward and whether any agent failed.
pub fn fleet_step<R: Rng + ?Sized>(
    ci: &mut [usize],
    repairs: &[usize],
    kernels: &[KernelRef],
    cfg: &RewardConfig,
    k: usize,
    rng: &mut R,
) -> (f64, bool) {
    let mut repair_offset = 0.0;
    let mut repaired = vec![false; ci.len()];
    for &a in repairs {
        repair_offset += cfg.alpha * ci[a] as f64;
        repaired[a] = true;
    }
    for (i, c) in ci.iter_mut().enumerate() {
        *c = if repaired[i] {
            CI_MAX
        } else {
            kernels[i].sample_idle_step(*c, rng)
        };
    }
    if ci.contains(&0) {
        (-((cfg.horizon - k) as f64), true)
    } else {
        (k as f64 - repair_offset, false)
    }
}

/// Joint policy built from one capacity-1 policy per group.
///
/// Each group sees only its own agents and its own budget share, so at most
/// one repair per group (and `r` in total) is emitted per step, and the
/// global budget holds because the shares sum to it.
#[derive(Debug, Clone)]
pub struct ComposedPolicy<P> {
    groups: Vec<Vec<usize>>,
    budgets: Vec<u32>,
    residual: Vec<u32>,
    policies: Vec<P>,
    scratch: FleetState,
}

impl<P: GroupPolicy> ComposedPolicy<P> {
    pub fn new(policies: Vec<P>, spec: &PartitionSpec) -> Result<Self, EnvError> {
        if policies.len() != spec.num_groups() {
            return Err(EnvError::ArityMismatch {
                expected: spec.num_groups(),
                got: policies.len(),
            });
        }
        Ok(Self {
            groups: spec.groups.clone(),
            budgets: spec.budgets.clone(),
            residual: spec.budgets.clone(),
            policies,
            scratch: FleetState::fresh(0, 0),
        })
    }

    pub fn policies(&self) -> &[P] {
        &self.policies
    }

    /// Global agent ID for a group-local index.
    pub fn global_id(&self, group: usize, local: usize) -> usize {
        self.groups[group][local]
    }
}

impl<P: GroupPolicy> FleetPolicy for ComposedPolicy<P> {
    fn reset(&mut self) {
        self.residual.clone_from(&self.budgets);
    }

    fn act(&mut self, view: &FleetView<'_>, rng: &mut dyn RngCore) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.groups.len());
        for (q, members) in self.groups.iter().enumerate() {
            self.scratch.ci.clear();
            self.scratch.ci.extend(members.iter().map(|&a| view.ci[a]));
            self.scratch.residual_budget = self.residual[q];
            self.scratch.step = view.step;
            let action = self.policies[q].act(&self.scratch, self.budgets[q], rng);
            if let Some(local) = action.repaired_agent() {
                // Evaluation-time mask: a group never overdraws its share.
                if local < members.len() && self.residual[q] > 0 {
                    self.residual[q] -= 1;
                    out.push(members[local]);
                }
            }
        }
        out
    }
}

/// Compose one policy per group and simulate the fleet.
pub fn compose_and_rollout_joint<P: GroupPolicy>(
    policies: Vec<P>,
    spec: &PartitionSpec,
    kernels: &[KernelRef],
    cfg: &RewardConfig,
    rng: &mut dyn RngCore,
) -> Result<EpisodeRecord, EnvError> {
    let mut joint = ComposedPolicy::new(policies, spec)?;
    let env = FleetEnv::new(kernels.to_vec(), spec.total_budget() as u32, spec.num_groups(), *cfg)?;
    Ok(env.run_episode(&mut joint, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent_kernel::toy;
    use crate::agent_kernel::{build_kernel, WeibullParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn weibull(k: f64, l: f64) -> KernelRef {
        Arc::new(build_kernel(&WeibullParams::new(k, l).unwrap()).unwrap())
    }

    #[test]
    fn encoding_layout() {
        let s = FleetState::fresh(3, 7);
        assert_eq!(encode_state(&s, 7), vec![1.0; 6]);
        let s = FleetState {
            ci: vec![50, 100],
            residual_budget: 5,
            step: 0,
        };
        let obs = encode_state(&s, 10);
        assert_eq!(obs, vec![0.5, 1.0, 0.5, 0.5]);
        let (m, b) = decode_metadata(&obs);
        assert_eq!(m, 2);
        assert!((b - 0.5).abs() < 1e-12);
        let mut padded = Vec::new();
        encode_state_into(&s, 10, 3, &mut padded);
        assert_eq!(padded, vec![0.5, 1.0, 1.0, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn reward_cases() {
        let kernels = vec![Arc::new(toy::immortal()), Arc::new(toy::immortal())];
        let cfg = RewardConfig {
            r1: -300.0,
            alpha: 0.5,
            horizon: 100,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = FleetState {
            ci: vec![40, 80],
            residual_budget: 2,
            step: 5,
        };
        let noop = step(&s, ActionIndex::NOOP, &kernels, &cfg, &mut rng).unwrap();
        assert_eq!(noop.reward, 5.0);
        assert!(!noop.done);
        let rep = step(&s, ActionIndex::repair(0), &kernels, &cfg, &mut rng).unwrap();
        assert_eq!(rep.reward, -15.0);
        assert_eq!(rep.state.ci, vec![100, 80]);
        assert_eq!(rep.state.residual_budget, 1);

        let broke = FleetState { residual_budget: 0, ..s.clone() };
        let v = step(&broke, ActionIndex::repair(1), &kernels, &cfg, &mut rng).unwrap();
        assert_eq!(v.reward, -300.0);
        assert!(v.done && v.violated_budget);

        let dying = vec![Arc::new(toy::unit_decay()), Arc::new(toy::immortal())];
        let s = FleetState {
            ci: vec![1, 80],
            residual_budget: 2,
            step: 7,
        };
        let f = step(&s, ActionIndex::repair(1), &dying, &cfg, &mut rng).unwrap();
        assert!(f.failed && f.done);
        assert_eq!(f.reward, -93.0);
        assert!(matches!(
            step(&f.state, ActionIndex::NOOP, &dying, &cfg, &mut rng),
            Err(EnvError::Terminated)
        ));
        assert!(matches!(
            step(&s, ActionIndex(3), &dying, &cfg, &mut rng),
            Err(EnvError::InvalidAction { .. })
        ));
    }

    #[test]
    fn horizon_terminates() {
        let kernels = vec![Arc::new(toy::immortal())];
        let cfg = RewardConfig {
            horizon: 3,
            ..Default::default()
        };
        let s = FleetState {
            ci: vec![50],
            residual_budget: 0,
            step: 2,
        };
        let out = step(&s, ActionIndex::NOOP, &kernels, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(out.done && !out.failed);
    }

    #[test]
    fn immortal_group_survives_horizon() {
        let kernels = vec![Arc::new(toy::immortal()); 3];
        let cfg = RewardConfig::default();
        let rec = rollout(&mut NoopPolicy, &kernels, 0, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(rec.t_abs, 100);
        assert_eq!(rec.repairs_used, 0);
        // sum of k over 0..100
        assert_eq!(rec.total_reward, 4950.0);
    }

    #[test]
    fn unit_decay_from_three_fails_at_three() {
        let kernels = vec![Arc::new(toy::unit_decay())];
        let start = FleetState {
            ci: vec![3],
            residual_budget: 0,
            step: 0,
        };
        let rec = rollout_from(
            &mut NoopPolicy,
            start,
            0,
            &kernels,
            &RewardConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(rec.t_abs, 3);
        // rewards 0 + 1 then failure at k = 2: -(100 - 2)
        assert_eq!(rec.total_reward, 1.0 - 98.0);
    }

    #[test]
    fn rollout_is_seed_deterministic() {
        let kernels = vec![weibull(2.0, 40.0), weibull(5.0, 60.0)];
        let cfg = RewardConfig::default();
        let mut greedy = |s: &FleetState, _b: u32| {
            let (i, &c) = s.ci.iter().enumerate().min_by_key(|(_, c)| **c).unwrap();
            if c < 60 && s.residual_budget > 0 {
                ActionIndex::repair(i)
            } else {
                ActionIndex::NOOP
            }
        };
        let a = rollout(&mut greedy, &kernels, 10, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = rollout(&mut greedy, &kernels, 10, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.repairs_used <= 10);
    }

    struct Greedy;
    impl FleetPolicy for Greedy {
        fn act(&mut self, view: &FleetView<'_>, _: &mut dyn RngCore) -> Vec<usize> {
            (0..view.ci.len()).collect()
        }
    }

    #[test]
    fn fleet_env_flags_and_truncates() {
        let kernels = vec![weibull(2.0, 40.0); 5];
        let env = FleetEnv::new(kernels, 4, 2, RewardConfig::default()).unwrap();
        let rec = env.run_episode(&mut Greedy, &mut ChaCha8Rng::seed_from_u64(2));
        assert!(rec.violated_capacity);
        assert!(rec.violated_budget);
        assert!(rec.repairs_used <= 4);
    }

    #[test]
    fn composed_policy_respects_shares() {
        let kernels: Vec<KernelRef> = (0..6).map(|i| weibull(1.0 + i as f64, 30.0 + 5.0 * i as f64)).collect();
        let spec = PartitionSpec {
            groups: vec![vec![0, 3, 5], vec![1, 2, 4]],
            budgets: vec![4, 3],
            pair_scores: vec![],
            permutation: vec![],
        };
        let always = |s: &FleetState, _b: u32| {
            let (i, _) = s.ci.iter().enumerate().min_by_key(|(_, c)| **c).unwrap();
            ActionIndex::repair(i)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let rec = compose_and_rollout_joint(vec![always, always], &spec, &kernels, &RewardConfig::default(), &mut rng).unwrap();
            assert!(!rec.violated_budget && !rec.violated_capacity);
            assert!(rec.repairs_used <= 7);
        }
        let noop = compose_and_rollout_joint(vec![NoopPolicy, NoopPolicy], &spec, &kernels, &RewardConfig::default(), &mut rng).unwrap();
        assert_eq!(noop.repairs_used, 0);
        assert!(matches!(
            ComposedPolicy::new(vec![NoopPolicy], &spec),
            Err(EnvError::ArityMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn fleet_failure_is_first_group_failure() {
        // Group A: unit decay from 100 never fails within 20 steps; group B:
        // agent starting at CI 4 with unit decay fails at t = 4.
        let kernels = vec![Arc::new(toy::unit_decay()), Arc::new(toy::unit_decay()), Arc::new(toy::immortal())];
        let env = FleetEnv::new(
            kernels,
            0,
            2,
            RewardConfig {
                horizon: 20,
                ..Default::default()
            },
        )
        .unwrap();
        let rec = env.run_episode_from(&mut NoopPolicy, &[100, 4, 30], &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(rec.t_abs, 4);
        let rec = env.run_episode_from(&mut NoopPolicy, &[100, 9, 30], &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(rec.t_abs, 9);
    }
}
