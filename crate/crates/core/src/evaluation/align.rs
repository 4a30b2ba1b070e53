//! Cluster alignment against ground truth.
//!
//! Cluster labels of a fit are arbitrary, so memberships are compared after
//! the global relabeling that minimises the squared error. The total error
//! decomposes over cluster pairs, so the search runs on a `K × K` cost matrix:
//! exhaustively for `K <= 8`, with the Hungarian method above that.

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::model::MembershipTensor;

/// Largest `K` searched exhaustively.
pub const MAX_EXHAUSTIVE_CLUSTERS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub rmse: f64,
    /// `permutation[b]` is the estimated cluster matched to true cluster `b`.
    pub permutation: Vec<usize>,
}

/// `cost[a][b] = sum_{t,i} (estimate[t,i,a] - truth[t,i,b])^2`.
fn cost_matrix(estimate: &MembershipTensor, truth: &MembershipTensor) -> Vec<Vec<f64>> {
    let k = truth.clusters();
    let mut cost = vec![vec![0.0; k]; k];
    let est = estimate.values().as_slice().expect("standard layout");
    let tru = truth.values().as_slice().expect("standard layout");
    for (e_row, t_row) in est.chunks_exact(k).zip(tru.chunks_exact(k)) {
        for (a, e) in e_row.iter().enumerate() {
            for (b, t) in t_row.iter().enumerate() {
                cost[a][b] += (e - t) * (e - t);
            }
        }
    }
    cost
}

/// RMSE between memberships after the best global cluster permutation.
pub fn rmse_aligned(estimate: &MembershipTensor, truth: &MembershipTensor) -> Result<Alignment> {
    if estimate.values().dim() != truth.values().dim() {
        return Err(Error::ShapeMismatch(format!(
            "estimate {:?} vs truth {:?}",
            estimate.values().dim(),
            truth.values().dim()
        )));
    }
    let k = truth.clusters();
    let cost = cost_matrix(estimate, truth);
    let permutation = if k <= MAX_EXHAUSTIVE_CLUSTERS {
        (0..k)
            .permutations(k)
            .map(|perm| {
                let total: f64 = perm.iter().enumerate().map(|(b, &a)| cost[a][b]).sum();
                (total, perm)
            })
            .min_by(|x, y| x.0.total_cmp(&y.0))
            .map(|(_, perm)| perm)
            .expect("at least one permutation")
    } else {
        hungarian(&transpose(&cost))
    };
    let total: f64 = permutation
        .iter()
        .enumerate()
        .map(|(b, &a)| cost[a][b])
        .sum();
    let n = truth.values().len() as f64;
    Ok(Alignment {
        rmse: (total / n).sqrt(),
        permutation,
    })
}

fn transpose(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    (0..n).map(|r| (0..n).map(|c| m[c][r]).collect()).collect()
}

/// Minimum-cost assignment of rows to columns of a square matrix.
/// Returns `assignment[row] = column`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // potentials and matching are 1-based; column 0 is a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        matched_row[0] = row;
        let mut col0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = matched_row[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[r0 - 1][col - 1] - u[r0] - v[col];
                if reduced < min_to[col] {
                    min_to[col] = reduced;
                    way[col] = col0;
                }
                if min_to[col] < delta {
                    delta = min_to[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[matched_row[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_to[col] -= delta;
                }
            }
            col0 = col1;
            if matched_row[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            matched_row[col0] = matched_row[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for col in 1..=n {
        if matched_row[col] > 0 {
            assignment[matched_row[col] - 1] = col - 1;
        }
    }
    assignment
}
