//! Agent partitioning into `r` capacity-1 groups.
//!
//! Agents are described by their TTA mean and variance. The pipeline pairs
//! maximally dissimilar agents with an assignment solve on `C = -D`, ranks
//! the pairs by distance, deals the second member of each ranked pair to the
//! groups in round-robin order, and splits the budget in proportion to group
//! size.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent_kernel::TtaStats;
use crate::lsap::solve_lsap;

/// Cost placed on the diagonal so an agent is never paired with itself.
pub const SELF_ASSIGNMENT_COST: f64 = 1e18;

pub const PARTITION_FILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("capacity r = {r} must satisfy 1 <= r <= n = {n}")]
    InvalidCapacity { r: usize, n: usize },
    #[error("invalid partition: {0}")]
    Invalid(String),
    #[error("partition file version {0} is not supported")]
    UnsupportedVersion(u32),
    #[error("partition i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("partition format: {0}")]
    Format(#[from] serde_json::Error),
}

/// Symmetric matrix of pairwise feature distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    /// `D_ij = sqrt((mu_i - mu_j)^2 + (var_i - var_j)^2)`.
    pub fn from_stats(stats: &[TtaStats]) -> Self {
        let n = stats.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let dm = stats[i].mean - stats[j].mean;
                let dv = stats[i].variance - stats[j].variance;
                let dist = (dm * dm + dv * dv).sqrt();
                d[i * n + j] = dist;
                d[j * n + i] = dist;
            }
        }
        Self { n, d }
    }

    /// Wrap raw values; checks symmetry, zero diagonal and non-negativity.
    pub fn from_values(n: usize, d: Vec<f64>) -> Result<Self, PartitionError> {
        if d.len() != n * n {
            return Err(PartitionError::Invalid(format!("expected {} entries", n * n)));
        }
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(PartitionError::Invalid(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let x = d[i * n + j];
                if !(x >= 0.0 && x.is_finite()) || x != d[j * n + i] {
                    return Err(PartitionError::Invalid(format!("bad entry at ({i}, {j})")));
                }
            }
        }
        Ok(Self { n, d })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    /// LSAP cost `C = -D` with the diagonal forbidden.
    pub fn assignment_cost(&self) -> Vec<f64> {
        let n = self.n;
        let mut c: Vec<f64> = self.d.iter().map(|x| -x).collect();
        for i in 0..n {
            c[i * n + i] = SELF_ASSIGNMENT_COST;
        }
        c
    }
}

pub fn distance_matrix(stats: &[TtaStats]) -> DistanceMatrix {
    DistanceMatrix::from_stats(stats)
}

/// Groups, their budgets, and the assignment data that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub groups: Vec<Vec<usize>>,
    pub budgets: Vec<u32>,
    /// `pair_scores[i] = D[i][permutation[i]]`; empty for random partitions.
    pub pair_scores: Vec<f64>,
    /// LSAP assignment; empty for random partitions.
    pub permutation: Vec<usize>,
}

impl PartitionSpec {
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn num_agents(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn total_budget(&self) -> u64 {
        self.budgets.iter().map(|&b| b as u64).sum()
    }

    pub fn max_group_size(&self) -> usize {
        self.groups.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// `(group, local index)` of every agent, indexed by agent ID.
    pub fn locate(&self) -> Vec<(usize, usize)> {
        let mut loc = vec![(usize::MAX, usize::MAX); self.num_agents()];
        for (q, g) in self.groups.iter().enumerate() {
            for (local, &agent) in g.iter().enumerate() {
                loc[agent] = (q, local);
            }
        }
        loc
    }

    /// Coverage, disjointness, balance and exact budget conservation.
    pub fn validate(&self, n: usize, budget: u32) -> Result<(), PartitionError> {
        if self.groups.len() != self.budgets.len() {
            return Err(PartitionError::Invalid("groups and budgets differ in length".into()));
        }
        let mut seen = vec![false; n];
        for g in &self.groups {
            for &a in g {
                if a >= n || seen[a] {
                    return Err(PartitionError::Invalid(format!("agent {a} out of range or repeated")));
                }
                seen[a] = true;
            }
        }
        if !seen.iter().all(|s| *s) {
            return Err(PartitionError::Invalid("not every agent is placed".into()));
        }
        let sizes: Vec<usize> = self.groups.iter().map(Vec::len).collect();
        let (lo, hi) = (
            sizes.iter().copied().min().unwrap_or(0),
            sizes.iter().copied().max().unwrap_or(0),
        );
        if hi - lo > 1 {
            return Err(PartitionError::Invalid(format!("group sizes range {lo}..{hi}")));
        }
        if self.total_budget() != budget as u64 {
            return Err(PartitionError::Invalid(format!(
                "budgets sum to {} instead of {budget}",
                self.total_budget()
            )));
        }
        Ok(())
    }
}

fn check_capacity(n: usize, r: usize) -> Result<(), PartitionError> {
    if r == 0 || r > n {
        return Err(PartitionError::InvalidCapacity { r, n });
    }
    Ok(())
}

fn assignment_and_order<R: Rng + ?Sized>(d: &DistanceMatrix, rng: &mut R) -> (Vec<usize>, Vec<f64>, Vec<usize>) {
    let n = d.n();
    let permutation = if n == 1 {
        vec![0]
    } else {
        solve_lsap(&d.assignment_cost(), n).permutation
    };
    let scores: Vec<f64> = (0..n).map(|i| d.get(i, permutation[i])).collect();
    // Shuffle then stable sort: ties end up in uniformly random order.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    (permutation, scores, order)
}

/// LSAP pairing, pair-score sorting, and round-robin split of second members.
pub fn build_partition<R: Rng + ?Sized>(
    d: &DistanceMatrix,
    r: usize,
    budget: u32,
    rng: &mut R,
) -> Result<PartitionSpec, PartitionError> {
    let n = d.n();
    check_capacity(n, r)?;
    let (permutation, pair_scores, order) = assignment_and_order(d, rng);
    let mut groups = vec![Vec::with_capacity(n / r + 1); r];
    for (pos, &i) in order.iter().enumerate() {
        groups[pos % r].push(permutation[i]);
    }
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    Ok(PartitionSpec {
        budgets: allocate_budget(budget, &sizes),
        groups,
        pair_scores,
        permutation,
    })
}

/// Variant that deals whole LSAP pairs `(i, pi(i))` round-robin.
///
/// Agents already placed through an earlier pair are skipped; afterwards
/// trailing agents move from the largest to the smallest group until sizes
/// differ by at most one.
pub fn build_partition_pair_rr<R: Rng + ?Sized>(
    d: &DistanceMatrix,
    r: usize,
    budget: u32,
    rng: &mut R,
) -> Result<PartitionSpec, PartitionError> {
    let n = d.n();
    check_capacity(n, r)?;
    let (permutation, pair_scores, order) = assignment_and_order(d, rng);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); r];
    let mut placed = vec![false; n];
    let mut next_group = 0usize;
    for &i in &order {
        let mut dealt = false;
        for agent in [i, permutation[i]] {
            if !placed[agent] {
                placed[agent] = true;
                groups[next_group % r].push(agent);
                dealt = true;
            }
        }
        if dealt {
            next_group += 1;
        }
    }
    loop {
        let (big, _) = groups
            .iter()
            .enumerate()
            .fold((0, 0), |acc, (q, g)| if g.len() > acc.1 { (q, g.len()) } else { acc });
        let (small, _) = groups
            .iter()
            .enumerate()
            .fold((0, usize::MAX), |acc, (q, g)| if g.len() < acc.1 { (q, g.len()) } else { acc });
        if groups[big].len() - groups[small].len() <= 1 {
            break;
        }
        let moved = groups[big].pop().expect("largest group is non-empty");
        groups[small].push(moved);
    }
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    Ok(PartitionSpec {
        budgets: allocate_budget(budget, &sizes),
        groups,
        pair_scores,
        permutation,
    })
}

/// Balanced uniform-random grouping with proportional budgets.
pub fn random_partition<R: Rng + ?Sized>(
    n: usize,
    r: usize,
    budget: u32,
    rng: &mut R,
) -> Result<PartitionSpec, PartitionError> {
    check_capacity(n, r)?;
    let mut agents: Vec<usize> = (0..n).collect();
    agents.shuffle(rng);
    let mut groups = vec![Vec::with_capacity(n / r + 1); r];
    for (pos, a) in agents.into_iter().enumerate() {
        groups[pos % r].push(a);
    }
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    Ok(PartitionSpec {
        budgets: allocate_budget(budget, &sizes),
        groups,
        pair_scores: Vec::new(),
        permutation: Vec::new(),
    })
}

/// `floor(B * m_q / n)` per group, then the leftover units one each in
/// descending size order (ties by group index).
pub fn allocate_budget(budget: u32, sizes: &[usize]) -> Vec<u32> {
    let n: u64 = sizes.iter().map(|&m| m as u64).sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let mut out: Vec<u32> = sizes
        .iter()
        .map(|&m| ((budget as u64 * m as u64) / n) as u32)
        .collect();
    let mut remainder = budget as u64 - out.iter().map(|&b| b as u64).sum::<u64>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    for &q in order.iter().cycle() {
        if remainder == 0 {
            break;
        }
        out[q] += 1;
        remainder -= 1;
    }
    out
}

/// Average over groups of the mean in-group pairwise distance.
/// Groups with fewer than two agents contribute zero.
pub fn diversity_score(spec: &PartitionSpec, d: &DistanceMatrix) -> f64 {
    if spec.groups.is_empty() {
        return 0.0;
    }
    let total: f64 = spec
        .groups
        .iter()
        .map(|g| {
            let m = g.len();
            if m < 2 {
                return 0.0;
            }
            let mut sum = 0.0;
            for (a, &i) in g.iter().enumerate() {
                for &j in &g[a + 1..] {
                    sum += d.get(i, j);
                }
            }
            2.0 * sum / (m * (m - 1)) as f64
        })
        .sum();
    total / spec.groups.len() as f64
}

#[derive(Serialize, Deserialize)]
struct PartitionFile {
    version: u32,
    #[serde(flatten)]
    spec: PartitionSpec,
}

pub fn save_partition(path: &Path, spec: &PartitionSpec) -> Result<(), PartitionError> {
    let file = PartitionFile {
        version: PARTITION_FILE_VERSION,
        spec: spec.clone(),
    };
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_partition(path: &Path) -> Result<PartitionSpec, PartitionError> {
    let file: PartitionFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    if file.version != PARTITION_FILE_VERSION {
        return Err(PartitionError::UnsupportedVersion(file.version));
    }
    Ok(file.spec)
}
