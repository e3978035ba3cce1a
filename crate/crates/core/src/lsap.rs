//! Dense linear sum assignment by shortest augmenting paths.
//!
//! Rows are inserted one at a time; each insertion runs a Dijkstra-like
//! search over reduced costs `c[i][j] - u[i] - v[j]` and augments along the
//! cheapest alternating path. Dual potentials stay feasible throughout, so
//! the final assignment is optimal. O(n^3) worst case.

use serde::{Deserialize, Serialize};

/// Optimal assignment: `permutation[i]` is the column assigned to row `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub permutation: Vec<usize>,
    pub total_cost: f64,
}

/// Minimise `sum_i cost(i, perm[i])` over permutations.
///
/// `cost` is row-major `n x n`. Entries must be finite; a large finite
/// sentinel may be used to forbid a cell.
pub fn solve_lsap(cost: &[f64], n: usize) -> Assignment {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return Assignment {
            permutation: Vec::new(),
            total_cost: 0.0,
        };
    }

    // 1-based internally; column 0 is the virtual source.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut min_to = vec![f64::INFINITY; n + 1];
    let mut used = vec![false; n + 1];

    for row in 1..=n {
        col_owner[0] = row;
        let mut col0 = 0usize;
        min_to.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);

        loop {
            used[col0] = true;
            let i0 = col_owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0usize;
            let base = (i0 - 1) * n;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[base + j - 1] - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = col0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    col1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            col0 = col1;
            if col_owner[col0] == 0 {
                break;
            }
        }

        // Flip the alternating path back to the source.
        loop {
            let prev = way[col0];
            col_owner[col0] = col_owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut permutation = vec![0usize; n];
    for j in 1..=n {
        permutation[col_owner[j] - 1] = j - 1;
    }
    let total_cost = permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    Assignment {
        permutation,
        total_cost,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(cost: &[f64], n: usize) -> f64 {
        fn rec(cost: &[f64], n: usize, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
            if row == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(cost, n, row + 1, used, acc + cost[row * n + j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, n, 0, &mut vec![false; n], 0.0, &mut best);
        best
    }

    #[test]
    fn empty_and_single() {
        assert!(solve_lsap(&[], 0).permutation.is_empty());
        let a = solve_lsap(&[4.5], 1);
        assert_eq!(a.permutation, vec![0]);
        assert_eq!(a.total_cost, 4.5);
    }

    #[test]
    fn unique_optimum_is_recovered() {
        // Row minima at columns (2, 0, 3, 1), all distinct.
        let cost = [
            9.0, 8.0, 1.0, 7.0, //
            1.0, 9.0, 8.0, 7.0, //
            7.0, 8.0, 9.0, 1.0, //
            8.0, 1.0, 7.0, 9.0,
        ];
        let a = solve_lsap(&cost, 4);
        assert_eq!(a.permutation, vec![2, 0, 3, 1]);
        assert_eq!(a.total_cost, 4.0);
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [6usize, 8] {
            for _ in 0..5 {
                let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(-50.0..50.0)).collect();
                let a = solve_lsap(&cost, n);
                let mut seen = vec![false; n];
                a.permutation.iter().for_each(|&j| seen[j] = true);
                assert!(seen.iter().all(|s| *s));
                assert!((a.total_cost - brute_force(&cost, n)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sentinel_diagonal_is_avoided() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 7;
        let mut cost: Vec<f64> = (0..n * n).map(|_| -rng.random_range(0.0..10.0)).collect();
        for i in 0..n {
            cost[i * n + i] = 1e18;
        }
        let a = solve_lsap(&cost, n);
        assert!(a.permutation.iter().enumerate().all(|(i, &j)| i != j));
    }
}
