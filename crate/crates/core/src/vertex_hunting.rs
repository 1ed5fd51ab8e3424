//! Vertex hunting on the rows of an empirical left singular matrix.
//!
//! [`prune`] discards high-norm rows that sit far from their nearest
//! neighbours, and [`spa`] runs the sequential projection algorithm on what
//! remains. All indices here are 0-based; the CLI converts to 1-based.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::DenseMatrix;

/// Rows whose projected norm falls below this are treated as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VertexError {
    #[error("invalid pruning configuration: {0}")]
    Config(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("degenerate simplex geometry: vertex {found} of {wanted} has projected norm {norm:e}")]
    Degenerate { found: usize, wanted: usize, norm: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Number of nearest neighbours averaged per candidate.
    pub r: usize,
    /// Upper quantile of row norms defining the candidate set.
    pub q: f64,
    /// Upper quantile of neighbour distances, among candidates, that is pruned.
    pub e: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self { r: 10, q: 0.4, e: 0.2 }
    }
}

impl PruneConfig {
    pub fn validate(&self, n: usize) -> Result<(), VertexError> {
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(VertexError::Config(format!("q = {} is not in (0, 1)", self.q)));
        }
        if !(self.e > 0.0 && self.e < 1.0) {
            return Err(VertexError::Config(format!("e = {} is not in (0, 1)", self.e)));
        }
        if self.r == 0 {
            return Err(VertexError::Config("r must be at least 1".into()));
        }
        if n <= self.r {
            return Err(VertexError::Config(format!(
                "need more than r = {} rows, got {n}",
                self.r
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub pruned_indices: BTreeSet<usize>,
    pub candidate_indices: BTreeSet<usize>,
    pub row_norms: Vec<f64>,
    pub avg_neighbor_dist: BTreeMap<usize, f64>,
}

impl PruneReport {
    /// Report for a run with pruning switched off.
    pub fn disabled(u_hat: &DenseMatrix) -> Self {
        Self {
            pruned_indices: BTreeSet::new(),
            candidate_indices: BTreeSet::new(),
            row_norms: row_norms(u_hat),
            avg_neighbor_dist: BTreeMap::new(),
        }
    }
}

/// Pure-subject index estimates in discovery order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VertexSet {
    pub indices: Vec<usize>,
}

impl VertexSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn row_norms(m: &DenseMatrix) -> Vec<f64> {
    m.row_iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// Members of the upper `p`-quantile of `values`.
///
/// The threshold is the value at rank `ceil(p·n)` from the top. Items
/// strictly above it are always included; items tied with it are included
/// only if that keeps the set at or below `ceil(p·n)` items.
pub fn upper_quantile_set(values: &[(usize, f64)], p: f64) -> BTreeSet<usize> {
    let n = values.len();
    if n == 0 {
        return BTreeSet::new();
    }
    let target = ((p * n as f64).ceil() as usize).clamp(1, n);
    let mut sorted: Vec<f64> = values.iter().map(|&(_, v)| v).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = sorted[target - 1];
    let at_least: BTreeSet<usize> = values
        .iter()
        .filter(|&&(_, v)| v >= threshold)
        .map(|&(i, _)| i)
        .collect();
    if at_least.len() <= target {
        at_least
    } else {
        values
            .iter()
            .filter(|&&(_, v)| v > threshold)
            .map(|&(i, _)| i)
            .collect()
    }
}

fn mean_neighbor_distance(u: &DenseMatrix, i: usize, r: usize) -> f64 {
    let row = u.row(i);
    let mut dists: Vec<f64> = (0..u.rows())
        .filter(|&j| j != i)
        .map(|j| {
            u.row(j)
                .iter()
                .zip(row)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    dists.select_nth_unstable_by(r - 1, |a, b| a.total_cmp(b));
    dists[..r].iter().sum::<f64>() / r as f64
}

/// Flags isolated high-norm rows of `u_hat` for removal.
pub fn prune(u_hat: &DenseMatrix, cfg: &PruneConfig) -> Result<PruneReport, VertexError> {
    if u_hat.cols() == 0 {
        return Err(VertexError::Dimension("K must be at least 1".into()));
    }
    cfg.validate(u_hat.rows())?;
    let norms = row_norms(u_hat);
    let indexed: Vec<(usize, f64)> = norms.iter().copied().enumerate().collect();
    let candidates = upper_quantile_set(&indexed, cfg.q);

    let candidate_list: Vec<usize> = candidates.iter().copied().collect();
    let dists: Vec<(usize, f64)> = candidate_list
        .par_iter()
        .map(|&i| (i, mean_neighbor_distance(u_hat, i, cfg.r)))
        .collect();
    let pruned = upper_quantile_set(&dists, cfg.e);

    Ok(PruneReport {
        pruned_indices: pruned,
        candidate_indices: candidates,
        row_norms: norms,
        avg_neighbor_dist: dists.into_iter().collect(),
    })
}

/// Sequential projection algorithm: `k` vertex rows of `u_hat`, skipping `excluded`.
pub fn spa(
    u_hat: &DenseMatrix,
    excluded: &BTreeSet<usize>,
    k: usize,
) -> Result<VertexSet, VertexError> {
    let n = u_hat.rows();
    let dim = u_hat.cols();
    let available = (0..n).filter(|i| !excluded.contains(i)).count();
    if k == 0 || available < k {
        return Err(VertexError::Dimension(format!(
            "cannot pick {k} vertices from {available} available rows"
        )));
    }
    let mut y = u_hat.as_slice().to_vec();
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    for &i in excluded {
        if i < n {
            taken[i] = true;
        }
    }
    for step in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let norm = y[i * dim..(i + 1) * dim].iter().map(|v| v * v).sum::<f64>().sqrt();
            // strict comparison: ties go to the lowest index
            if best.is_none_or(|(_, b)| norm > b) {
                best = Some((i, norm));
            }
        }
        let (idx, norm) = best.expect("available rows checked above");
        if norm < DEGENERATE_NORM {
            return Err(VertexError::Degenerate {
                found: step,
                wanted: k,
                norm,
            });
        }
        let u: Vec<f64> = y[idx * dim..(idx + 1) * dim].iter().map(|v| v / norm).collect();
        project_out(&mut y, dim, &u);
        taken[idx] = true;
        chosen.push(idx);
    }
    Ok(VertexSet { indices: chosen })
}

/// `Y ← Y (I − u uᵀ)` for a unit vector `u`, rows of length `dim`.
fn project_out(y: &mut [f64], dim: usize, u: &[f64]) {
    for row in y.chunks_mut(dim) {
        let dot: f64 = row.iter().zip(u).map(|(a, b)| a * b).sum();
        for (a, b) in row.iter_mut().zip(u) {
            *a -= dot * b;
        }
    }
}
