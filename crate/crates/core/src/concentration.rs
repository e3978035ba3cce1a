//! Group-average statistics of symmetric Gaussian matrices and the
//! union/Chernoff bound on the largest gap between group averages.
//!
//! For a symmetric `nk x nk` matrix with i.i.d. standard-normal upper
//! triangle and a partition of the nodes into `n` groups of `k`,
//! `S_t` is the mean edge weight inside group `t`. The bound
//! `4 exp(2k(1 + ln n) - eps^2 k(k-1)/32)` covers the probability that
//! any two group averages differ by more than `eps`, over every partition.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ppo::stream_rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConcentrationError {
    #[error("groups need at least 2 members, got {0}")]
    GroupTooSmall(usize),
    #[error("matrix of {len} entries is not {dim} x {dim}")]
    Shape { len: usize, dim: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Row-major symmetric matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Upper triangle i.i.d. `N(0, 1)`, mirrored; diagonal 0.
    pub fn standard_normal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in i + 1..dim {
                let x: f64 = rng.sample(StandardNormal);
                data[i * dim + j] = x;
                data[j * dim + i] = x;
            }
        }
        Self { dim, data }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        let mut data = vec![c; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 0.0;
        }
        Self { dim, data }
    }
}

/// `S_t = (2 / (k(k-1))) sum_{i<j in V_t} X_ij` for each group.
pub fn group_averages(matrix: &SymmetricMatrix, groups: &[Vec<usize>]) -> Result<Vec<f64>, ConcentrationError> {
    if matrix.data.len() != matrix.dim * matrix.dim {
        return Err(ConcentrationError::Shape {
            len: matrix.data.len(),
            dim: matrix.dim,
        });
    }
    groups
        .iter()
        .map(|g| {
            let k = g.len();
            if k < 2 {
                return Err(ConcentrationError::GroupTooSmall(k));
            }
            let mut sum = 0.0;
            for (a, &i) in g.iter().enumerate() {
                for &j in &g[a + 1..] {
                    sum += matrix.get(i, j);
                }
            }
            Ok(2.0 * sum / (k * (k - 1)) as f64)
        })
        .collect()
}

/// `max_{t != l} |S_t - S_l|`, i.e. the range of the group averages.
pub fn max_gap(averages: &[f64]) -> f64 {
    let (lo, hi) = averages
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    if averages.len() < 2 {
        0.0
    } else {
        hi - lo
    }
}

/// `4 exp(2k(1 + ln n) - eps^2 k(k-1) / 32)`. Values above 1 are vacuous.
pub fn chernoff_union_bound(n: usize, k: usize, epsilon: f64) -> f64 {
    let (n, k) = (n as f64, k as f64);
    4.0 * (2.0 * k * (1.0 + n.ln()) - epsilon * epsilon * k * (k - 1.0) / 32.0).exp()
}

/// Contiguous partition `{0..k}, {k..2k}, ...`.
pub fn balanced_partition(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0..n).map(|t| (t * k..(t + 1) * k).collect()).collect()
}

/// Every partition of `0..n*k` into `n` unlabelled groups of size `k`.
pub fn all_balanced_partitions(n: usize, k: usize) -> Vec<Vec<Vec<usize>>> {
    fn rec(remaining: Vec<usize>, k: usize, current: &mut Vec<Vec<usize>>, out: &mut Vec<Vec<Vec<usize>>>) {
        if remaining.is_empty() {
            out.push(current.clone());
            return;
        }
        // The smallest remaining node anchors the next group.
        let first = remaining[0];
        let rest = &remaining[1..];
        let mut pick = Vec::with_capacity(k - 1);
        choose(rest, k - 1, 0, &mut pick, &mut |chosen| {
            let mut group = vec![first];
            group.extend_from_slice(chosen);
            let left: Vec<usize> = rest.iter().copied().filter(|x| !chosen.contains(x)).collect();
            current.push(group);
            rec(left, k, current, out);
            current.pop();
        });
    }
    fn choose(items: &[usize], r: usize, start: usize, pick: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if pick.len() == r {
            f(pick);
            return;
        }
        for i in start..items.len() {
            pick.push(items[i]);
            choose(items, r, i + 1, pick, f);
            pick.pop();
        }
    }
    let mut out = Vec::new();
    if k == 0 {
        return out;
    }
    rec((0..n * k).collect(), k, &mut Vec::new(), &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapExperimentResult {
    pub n: usize,
    pub k: usize,
    pub epsilon: f64,
    pub num_trials: usize,
    /// Fraction of trials whose max gap exceeds `epsilon`.
    pub empirical_violation_rate: f64,
    pub analytic_bound: f64,
    pub max_gaps: Vec<f64>,
}

impl GapExperimentResult {
    /// Binomial standard error of the violation rate.
    pub fn standard_error(&self) -> f64 {
        let p = self.empirical_violation_rate;
        (p * (1.0 - p) / self.num_trials as f64).sqrt()
    }
}

/// Which partitions a trial maximises over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScope {
    /// The contiguous balanced partition only.
    Fixed,
    /// Every balanced partition; only feasible for `n k <= 8`.
    Exhaustive,
}

pub const EXHAUSTIVE_MAX_NODES: usize = 8;

/// Monte-Carlo estimate of `P(max gap > eps)`; trial `i` uses RNG stream
/// `i` of `seed`.
pub fn gap_experiment(
    n: usize,
    k: usize,
    epsilon: f64,
    num_trials: usize,
    seed: u64,
    scope: PartitionScope,
) -> Result<GapExperimentResult, ConcentrationError> {
    if num_trials == 0 || n < 2 || !(epsilon > 0.0) {
        return Err(ConcentrationError::InvalidArgument(format!(
            "need trials >= 1, n >= 2 and eps > 0; got trials={num_trials}, n={n}, eps={epsilon}"
        )));
    }
    if k < 2 {
        return Err(ConcentrationError::GroupTooSmall(k));
    }
    let partitions = match scope {
        PartitionScope::Fixed => vec![balanced_partition(n, k)],
        PartitionScope::Exhaustive => {
            if n * k > EXHAUSTIVE_MAX_NODES {
                return Err(ConcentrationError::InvalidArgument(format!(
                    "exhaustive enumeration needs n k <= {EXHAUSTIVE_MAX_NODES}"
                )));
            }
            all_balanced_partitions(n, k)
        }
    };
    let max_gaps: Vec<f64> = (0..num_trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, t as u64);
            let x = SymmetricMatrix::standard_normal(n * k, &mut rng);
            partitions
                .iter()
                .map(|p| max_gap(&group_averages(&x, p).expect("groups have k >= 2 members")))
                .fold(0.0, f64::max)
        })
        .collect();
    let violations = max_gaps.iter().filter(|g| **g > epsilon).count();
    Ok(GapExperimentResult {
        n,
        k,
        epsilon,
        num_trials,
        empirical_violation_rate: violations as f64 / num_trials as f64,
        analytic_bound: chernoff_union_bound(n, k, epsilon),
        max_gaps,
    })
}

/// One CSV row of the concentration report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub n: usize,
    pub k: usize,
    pub epsilon: f64,
    pub trials: usize,
    pub violation_rate: f64,
    pub bound: f64,
}

impl From<&GapExperimentResult> for ConcentrationRow {
    fn from(r: &GapExperimentResult) -> Self {
        Self {
            n: r.n,
            k: r.k,
            epsilon: r.epsilon,
            trials: r.num_trials,
            violation_rate: r.empirical_violation_rate,
            bound: r.analytic_bound,
        }
    }
}
