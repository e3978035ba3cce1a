//! Per-agent deterioration dynamics.
//!
//! Each agent carries a Condition Index (CI) in `0..=100`. Under the idle
//! action the CI drops by a random amount whose law is a discretised Weibull
//! density, renormalised over the drops that keep the CI non-negative:
//!
//! ```text
//! P(h -> h') = f(h - h' + 1) / sum_{d=0..h} f(d + 1),   0 <= h' <= h
//! ```
//!
//! CI 0 is absorbing. Restoration is a deterministic reset to CI 100 and is
//! handled by the simulator, not by the kernel.
//!
//! Time-to-absorption (TTA) statistics are available both exactly (the kernel
//! is lower triangular, so the hitting-time system is solved by forward
//! substitution) and by Monte-Carlo rollouts of the idle policy.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Highest (perfect) condition index.
pub const CI_MAX: usize = 100;
/// Number of discrete CI levels, `0..=CI_MAX`.
pub const NUM_CI_LEVELS: usize = CI_MAX + 1;

const ROW_SUM_TOL: f64 = 1e-9;

/// Agent-table file format version.
pub const AGENT_TABLE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("weibull {name} must be positive and finite, got {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("density evaluated at non-positive point {0}")]
    NonPositiveArgument(f64),
    #[error("kernel row {row} is invalid: {reason}")]
    InvalidKernel { row: usize, reason: String },
    #[error("absorption time is infinite from CI {state}: the row never moves toward failure")]
    Singular { state: usize },
    #[error("CI state {0} is outside 0..=100")]
    StateOutOfRange(usize),
    #[error("Monte-Carlo estimation needs at least one run")]
    NoRuns,
    #[error("agent table version {found} is not supported (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("agent table i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("agent table format: {0}")]
    Format(#[from] serde_json::Error),
}

/// Shape `k` and scale `lambda` of a continuous Weibull law, in CI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullParams {
    pub shape: f64,
    pub scale: f64,
}

impl WeibullParams {
    pub fn new(shape: f64, scale: f64) -> Result<Self, ModelError> {
        let params = Self { shape, scale };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, value) in [("shape", self.shape), ("scale", self.scale)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::InvalidParameter { name, value });
            }
        }
        Ok(())
    }

    /// Weibull density `(k/l) (x/l)^(k-1) exp(-(x/l)^k)`.
    pub fn density(&self, x: f64) -> Result<f64, ModelError> {
        self.validate()?;
        if !(x > 0.0 && x.is_finite()) {
            return Err(ModelError::NonPositiveArgument(x));
        }
        Ok(self.pdf(x))
    }

    fn pdf(&self, x: f64) -> f64 {
        let z = x / self.scale;
        (self.shape / self.scale) * z.powf(self.shape - 1.0) * (-z.powf(self.shape)).exp()
    }
}

/// Free-function form of [`WeibullParams::density`].
pub fn weibull_density(params: &WeibullParams, x: f64) -> Result<f64, ModelError> {
    params.density(x)
}

/// Dense 101x101 row-stochastic idle-action transition matrix.
///
/// Row `h` is supported on `0..=h`; row 0 is a point mass on 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DeteriorationKernel {
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl DeteriorationKernel {
    pub fn num_states(&self) -> usize {
        NUM_CI_LEVELS
    }

    /// Discrete Weibull kernel built from the continuous density.
    pub fn from_weibull(params: &WeibullParams) -> Result<Self, ModelError> {
        params.validate()?;
        // f(d + 1) for d = 0..=100, shared by every row.
        let weights: Vec<f64> = (0..NUM_CI_LEVELS)
            .map(|d| params.pdf((d + 1) as f64))
            .collect();
        let mut probs = vec![0.0; NUM_CI_LEVELS * NUM_CI_LEVELS];
        probs[0] = 1.0;
        for h in 1..NUM_CI_LEVELS {
            let norm: f64 = weights[..=h].iter().sum();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(ModelError::InvalidKernel {
                    row: h,
                    reason: format!("normaliser {norm} underflowed"),
                });
            }
            let row = &mut probs[h * NUM_CI_LEVELS..(h + 1) * NUM_CI_LEVELS];
            for (next, p) in row.iter_mut().enumerate().take(h + 1) {
                *p = weights[h - next] / norm;
            }
        }
        Ok(Self::with_cdf(probs))
    }

    /// Kernel from explicit rows, checked against the kernel invariants.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ModelError> {
        if rows.len() != NUM_CI_LEVELS {
            return Err(ModelError::InvalidKernel {
                row: rows.len(),
                reason: format!("expected {NUM_CI_LEVELS} rows"),
            });
        }
        let mut probs = Vec::with_capacity(NUM_CI_LEVELS * NUM_CI_LEVELS);
        for (h, row) in rows.iter().enumerate() {
            if row.len() != NUM_CI_LEVELS {
                return Err(ModelError::InvalidKernel {
                    row: h,
                    reason: format!("expected {NUM_CI_LEVELS} columns, got {}", row.len()),
                });
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(ModelError::InvalidKernel {
                    row: h,
                    reason: "negative or non-finite entry".into(),
                });
            }
            if row[h + 1..].iter().any(|p| *p > 0.0) {
                return Err(ModelError::InvalidKernel {
                    row: h,
                    reason: "mass on a higher CI".into(),
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(ModelError::InvalidKernel {
                    row: h,
                    reason: format!("row sums to {sum}"),
                });
            }
            probs.extend(row.iter().map(|p| p / sum));
        }
        if probs[0] != 1.0 {
            return Err(ModelError::InvalidKernel {
                row: 0,
                reason: "failure state is not absorbing".into(),
            });
        }
        Ok(Self::with_cdf(probs))
    }

    fn with_cdf(probs: Vec<f64>) -> Self {
        let mut cdf = vec![0.0; probs.len()];
        for h in 0..NUM_CI_LEVELS {
            let mut acc = 0.0;
            for next in 0..NUM_CI_LEVELS {
                acc += probs[h * NUM_CI_LEVELS + next];
                cdf[h * NUM_CI_LEVELS + next] = acc;
            }
        }
        Self { probs, cdf }
    }

    /// Transition probability `P(h -> next)` under the idle action.
    pub fn prob(&self, h: usize, next: usize) -> f64 {
        self.probs[h * NUM_CI_LEVELS + next]
    }

    pub fn row(&self, h: usize) -> &[f64] {
        &self.probs[h * NUM_CI_LEVELS..(h + 1) * NUM_CI_LEVELS]
    }

    /// Expected CI after one idle step from `h`.
    pub fn expected_next(&self, h: usize) -> f64 {
        self.row(h)
            .iter()
            .enumerate()
            .map(|(next, p)| next as f64 * p)
            .sum()
    }

    /// Draw the next CI from row `h`. Never exceeds `h`.
    pub fn sample_idle_step<R: Rng + ?Sized>(&self, h: usize, rng: &mut R) -> usize {
        if h == 0 {
            return 0;
        }
        let u: f64 = rng.random();
        let cdf = &self.cdf[h * NUM_CI_LEVELS..=h * NUM_CI_LEVELS + h];
        cdf.partition_point(|c| *c <= u).min(h)
    }

    /// Kernel restricted to the grid `0, step, 2*step, ..., 100`.
    ///
    /// Each row's mass is moved to the nearest grid level not above the
    /// current state, then renormalised.
    pub fn coarsened(&self, step: usize) -> Result<Self, ModelError> {
        if step == 0 || !CI_MAX.is_multiple_of(step) {
            return Err(ModelError::InvalidKernel {
                row: 0,
                reason: format!("grid step {step} does not divide {CI_MAX}"),
            });
        }
        let mut rows = vec![vec![0.0; NUM_CI_LEVELS]; NUM_CI_LEVELS];
        for (h, row) in rows.iter_mut().enumerate() {
            let ceiling = (h / step) * step;
            for next in 0..=h {
                let p = self.prob(h, next);
                if p == 0.0 {
                    continue;
                }
                let nearest = ((next + step / 2) / step) * step;
                row[nearest.min(ceiling)] += p;
            }
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= sum);
        }
        Self::from_rows(&rows)
    }

    fn check_progress(&self) -> Result<(), ModelError> {
        for h in 1..NUM_CI_LEVELS {
            if 1.0 - self.prob(h, h) <= 0.0 {
                return Err(ModelError::Singular { state: h });
            }
        }
        Ok(())
    }

    /// Exact TTA mean and variance for every start state.
    ///
    /// With `t(h) = E[T | h]` and `s(h) = E[T^2 | h]`:
    /// `t(h) = 1 + sum P(h,h') t(h')` and
    /// `s(h) = sum P(h,h') (1 + 2 t(h') + s(h'))`.
    pub fn expected_tta_exact(&self) -> Result<Vec<TtaStats>, ModelError> {
        self.check_progress()?;
        let mut mean = [0.0; NUM_CI_LEVELS];
        let mut second = [0.0; NUM_CI_LEVELS];
        for h in 1..NUM_CI_LEVELS {
            let stay = self.prob(h, h);
            let denom = 1.0 - stay;
            let mut t_acc = 1.0;
            for (next, t) in mean.iter().enumerate().take(h).skip(1) {
                t_acc += self.prob(h, next) * t;
            }
            mean[h] = t_acc / denom;
            let mut s_acc = 1.0 + 2.0 * stay * mean[h];
            for next in 1..h {
                s_acc += self.prob(h, next) * (2.0 * mean[next] + second[next]);
            }
            second[h] = s_acc / denom;
        }
        Ok((0..NUM_CI_LEVELS)
            .map(|h| TtaStats {
                mean: mean[h],
                variance: (second[h] - mean[h] * mean[h]).max(0.0),
                source: TtaSource::Exact,
            })
            .collect())
    }

    /// Sample mean and unbiased sample variance of the idle-policy absorption
    /// time from `start`, over `num_runs` rollouts seeded by `seed`.
    pub fn estimate_tta_mc(
        &self,
        start: usize,
        num_runs: usize,
        seed: u64,
    ) -> Result<TtaStats, ModelError> {
        if start > CI_MAX {
            return Err(ModelError::StateOutOfRange(start));
        }
        if num_runs == 0 {
            return Err(ModelError::NoRuns);
        }
        self.check_progress()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for run in 0..num_runs {
            let mut h = start;
            let mut steps = 0u64;
            while h > 0 {
                h = self.sample_idle_step(h, &mut rng);
                steps += 1;
            }
            // Welford
            let x = steps as f64;
            let delta = x - mean;
            mean += delta / (run + 1) as f64;
            m2 += delta * (x - mean);
        }
        let variance = if num_runs > 1 {
            m2 / (num_runs - 1) as f64
        } else {
            0.0
        };
        Ok(TtaStats {
            mean,
            variance,
            source: TtaSource::MonteCarlo { num_runs },
        })
    }
}

/// Free-function form of [`DeteriorationKernel::from_weibull`].
pub fn build_kernel(params: &WeibullParams) -> Result<DeteriorationKernel, ModelError> {
    DeteriorationKernel::from_weibull(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TtaSource {
    Exact,
    MonteCarlo { num_runs: usize },
}

/// Mean and variance of the absorption time, in steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TtaStats {
    pub mean: f64,
    pub variance: f64,
    pub source: TtaSource,
}

/// How partition features are computed for an agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TtaMode {
    Exact,
    MonteCarlo { num_runs: usize },
}

impl Default for TtaMode {
    fn default() -> Self {
        TtaMode::MonteCarlo { num_runs: 1000 }
    }
}

/// One agent: Weibull parameters, its kernel, and TTA statistics from CI 100.
#[derive(Debug, Clone)]
pub struct AgentModel {
    pub id: usize,
    pub params: WeibullParams,
    pub kernel: Arc<DeteriorationKernel>,
    pub tta: TtaStats,
}

impl AgentModel {
    pub fn new(id: usize, params: WeibullParams, mode: TtaMode, seed: u64) -> Result<Self, ModelError> {
        let kernel = DeteriorationKernel::from_weibull(&params)?;
        let tta = match mode {
            TtaMode::Exact => kernel.expected_tta_exact()?[CI_MAX],
            TtaMode::MonteCarlo { num_runs } => kernel.estimate_tta_mc(CI_MAX, num_runs, seed)?,
        };
        Ok(Self {
            id,
            params,
            kernel: Arc::new(kernel),
            tta,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AgentTable {
    version: u32,
    agents: Vec<AgentRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AgentRecord {
    id: usize,
    shape: f64,
    scale: f64,
    mean: f64,
    variance: f64,
    source: TtaSource,
}

/// Write agents (id, shape, scale, TTA mean/variance) as versioned JSON.
pub fn save_agent_table(path: &Path, agents: &[AgentModel]) -> Result<(), ModelError> {
    let table = AgentTable {
        version: AGENT_TABLE_VERSION,
        agents: agents
            .iter()
            .map(|a| AgentRecord {
                id: a.id,
                shape: a.params.shape,
                scale: a.params.scale,
                mean: a.tta.mean,
                variance: a.tta.variance,
                source: a.tta.source,
            })
            .collect(),
    };
    fs::write(path, serde_json::to_string_pretty(&table)?)?;
    Ok(())
}

/// Read an agent table, rebuilding kernels and keeping the stored TTA stats.
pub fn load_agent_table(path: &Path) -> Result<Vec<AgentModel>, ModelError> {
    let table: AgentTable = serde_json::from_str(&fs::read_to_string(path)?)?;
    if table.version != AGENT_TABLE_VERSION {
        return Err(ModelError::UnsupportedVersion {
            found: table.version,
            expected: AGENT_TABLE_VERSION,
        });
    }
    table
        .agents
        .into_iter()
        .map(|r| {
            let params = WeibullParams::new(r.shape, r.scale)?;
            Ok(AgentModel {
                id: r.id,
                params,
                kernel: Arc::new(DeteriorationKernel::from_weibull(&params)?),
                tta: TtaStats {
                    mean: r.mean,
                    variance: r.variance,
                    source: r.source,
                },
            })
        })
        .collect()
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_special_case() {
        let p = WeibullParams::new(1.0, 1.0).unwrap();
        assert!((p.density(1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn density_vanishes_at_origin_for_shape_above_one() {
        let p = WeibullParams::new(2.0, 1.0).unwrap();
        assert!(p.density(1e-12).unwrap() < 1e-10);
    }

    #[test]
    fn domain_errors() {
        assert!(WeibullParams::new(0.0, 1.0).is_err());
        assert!(WeibullParams::new(1.0, -2.0).is_err());
        assert!(WeibullParams::new(f64::NAN, 1.0).is_err());
        let p = WeibullParams::new(1.0, 1.0).unwrap();
        assert!(matches!(p.density(0.0), Err(ModelError::NonPositiveArgument(_))));
        assert!(p.density(-1.0).is_err());
    }

    #[test]
    fn kernel_invariants() {
        for (k, l) in [(1.0, 25.0), (7.0, 70.0), (3.3, 41.0), (1.0, 70.0), (7.0, 25.0)] {
            let kernel = build_kernel(&WeibullParams::new(k, l).unwrap()).unwrap();
            assert_eq!(kernel.row(0)[0], 1.0);
            assert!(kernel.row(0)[1..].iter().all(|p| *p == 0.0));
            for h in 0..NUM_CI_LEVELS {
                let row = kernel.row(h);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|p| *p >= 0.0));
                assert!(row[h + 1..].iter().all(|p| *p == 0.0));
            }
        }
    }

    #[test]
    fn from_rows_rejects_upward_mass() {
        let mut rows = vec![vec![0.0; NUM_CI_LEVELS]; NUM_CI_LEVELS];
        rows[0][0] = 1.0;
        for (h, row) in rows.iter_mut().enumerate().skip(1) {
            row[h - 1] = 1.0;
        }
        rows[5][4] = 0.5;
        rows[5][6] = 0.5;
        assert!(DeteriorationKernel::from_rows(&rows).is_err());
    }

    #[test]
    fn geometric_toy_chain() {
        let p = 0.3;
        let kernel = toy::kernel_from(|h| if h == 1 { vec![(0, p), (1, 1.0 - p)] } else { vec![(h - 1, 1.0)] });
        let stats = kernel.expected_tta_exact().unwrap();
        assert_eq!(stats[0].mean, 0.0);
        assert_eq!(stats[0].variance, 0.0);
        assert!((stats[1].mean - 1.0 / p).abs() < 1e-12);
        assert!((stats[1].variance - (1.0 - p) / (p * p)).abs() < 1e-12);
    }

    #[test]
    fn singular_kernel_reported() {
        assert!(matches!(
            toy::immortal().expected_tta_exact(),
            Err(ModelError::Singular { state: 1 })
        ));
        assert!(toy::immortal().estimate_tta_mc(100, 10, 0).is_err());
    }

    #[test]
    fn tta_monotone_in_start_state() {
        let kernel = build_kernel(&WeibullParams::new(2.5, 33.0).unwrap()).unwrap();
        let stats = kernel.expected_tta_exact().unwrap();
        for w in stats.windows(2) {
            assert!(w[1].mean >= w[0].mean - 1e-12);
        }
    }

    #[test]
    fn mc_from_failed_state_is_zero() {
        let kernel = build_kernel(&WeibullParams::new(2.0, 40.0).unwrap()).unwrap();
        let s = kernel.estimate_tta_mc(0, 50, 9).unwrap();
        assert_eq!((s.mean, s.variance), (0.0, 0.0));
        assert!(matches!(kernel.estimate_tta_mc(10, 0, 9), Err(ModelError::NoRuns)));
    }

    #[test]
    fn mc_is_deterministic_per_seed() {
        let kernel = build_kernel(&WeibullParams::new(2.0, 40.0).unwrap()).unwrap();
        let a = kernel.estimate_tta_mc(100, 500, 17).unwrap();
        let b = kernel.estimate_tta_mc(100, 500, 17).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.variance.to_bits(), b.variance.to_bits());
        assert_eq!(a.source, TtaSource::MonteCarlo { num_runs: 500 });
    }

    #[test]
    fn idle_step_never_improves() {
        let kernel = build_kernel(&WeibullParams::new(1.4, 30.0).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let mut h = CI_MAX;
            while h > 0 {
                let next = kernel.sample_idle_step(h, &mut rng);
                assert!(next <= h);
                h = next;
            }
            assert_eq!(kernel.sample_idle_step(0, &mut rng), 0);
        }
    }

    #[test]
    fn coarsened_kernel_stays_on_grid() {
        let kernel = build_kernel(&WeibullParams::new(2.0, 30.0).unwrap()).unwrap();
        let coarse = kernel.coarsened(10).unwrap();
        for h in (0..=CI_MAX).step_by(10) {
            let row = coarse.row(h);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (next, p) in row.iter().enumerate() {
                if *p > 0.0 {
                    assert_eq!(next % 10, 0);
                    assert!(next <= h);
                }
            }
        }
        assert!(coarse.expected_tta_exact().is_ok());
        assert!(kernel.coarsened(7).is_err());
    }

    #[test]
    fn agent_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agents.json");
        let agents: Vec<_> = [(1.5, 30.0), (6.0, 60.0)]
            .iter()
            .enumerate()
            .map(|(i, (k, l))| AgentModel::new(i, WeibullParams::new(*k, *l).unwrap(), TtaMode::Exact, 0).unwrap())
            .collect();
        save_agent_table(&path, &agents).unwrap();
        let loaded = load_agent_table(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        for (a, b) in agents.iter().zip(&loaded) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.params, b.params);
            assert_eq!(a.tta, b.tta);
            assert_eq!(*a.kernel, *b.kernel);
        }
    }
}
