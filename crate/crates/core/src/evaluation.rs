//! Error metrics against known ground truth and replication studies.

use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{self, FitConfig, ItemParamMatrix, MembershipMatrix, ResponseMatrix};
use crate::linalg::DenseMatrix;
use crate::simulation::{self, SimConfig};

/// Largest K for which the alignment is an exhaustive permutation search.
pub const MAX_EXHAUSTIVE_K: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluationError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("replication count must be at least 1")]
    NoReplications,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedComparison {
    /// `permutation[k]` is the estimated column matched to true profile `k`.
    pub permutation: Vec<usize>,
    pub mae_pi: f64,
    pub mae_theta: f64,
    /// Set when K was too large for the exhaustive search.
    pub greedy: bool,
}

pub fn mean_absolute_error(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch");
    let n = a.as_slice().len();
    if n == 0 {
        return 0.0;
    }
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n as f64
}

/// `cost[k][l]`: contribution to `mae_pi + mae_theta` of matching true
/// profile `k` with estimated column `l`.
fn pairing_costs(
    pi_hat: &DenseMatrix,
    theta_hat: &DenseMatrix,
    pi: &DenseMatrix,
    theta: &DenseMatrix,
) -> Vec<Vec<f64>> {
    let k = pi.cols();
    let n_pi = (pi.rows() * k).max(1) as f64;
    let n_theta = (theta.rows() * k).max(1) as f64;
    (0..k)
        .map(|t| {
            (0..k)
                .map(|e| {
                    let cp: f64 = (0..pi.rows()).map(|i| (pi.get(i, t) - pi_hat.get(i, e)).abs()).sum();
                    let ct: f64 = (0..theta.rows())
                        .map(|j| (theta.get(j, t) - theta_hat.get(j, e)).abs())
                        .sum();
                    cp / n_pi + ct / n_theta
                })
                .collect()
        })
        .collect()
}

/// Minimum-cost permutation by exhaustive enumeration (Heap's algorithm).
/// Ties keep the first permutation encountered, starting from the identity.
fn best_permutation(cost: &[Vec<f64>]) -> Vec<usize> {
    let k = cost.len();
    let mut perm: Vec<usize> = (0..k).collect();
    let total = |p: &[usize]| p.iter().enumerate().map(|(t, &e)| cost[t][e]).sum::<f64>();
    let mut best = perm.clone();
    let mut best_cost = total(&perm);
    let mut c = vec![0usize; k];
    let mut i = 1;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let v = total(&perm);
            if v < best_cost {
                best_cost = v;
                best.copy_from_slice(&perm);
            }
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Greedy matching: repeatedly pair the most correlated remaining Θ columns.
fn greedy_permutation(theta_hat: &DenseMatrix, theta: &DenseMatrix) -> Vec<usize> {
    let k = theta.cols();
    let est: Vec<Vec<f64>> = (0..k).map(|c| theta_hat.column(c)).collect();
    let truth: Vec<Vec<f64>> = (0..k).map(|c| theta.column(c)).collect();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(k * k);
    for t in 0..k {
        for e in 0..k {
            pairs.push((pearson(&truth[t], &est[e]), t, e));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut perm = vec![usize::MAX; k];
    let mut used = vec![false; k];
    for (_, t, e) in pairs {
        if perm[t] == usize::MAX && !used[e] {
            perm[t] = e;
            used[e] = true;
        }
    }
    perm
}

/// Matches estimated profiles to true ones and reports both MAEs.
pub fn align(
    pi_hat: &MembershipMatrix,
    theta_hat: &ItemParamMatrix,
    pi_true: &MembershipMatrix,
    theta_true: &ItemParamMatrix,
) -> Result<AlignedComparison, EvaluationError> {
    let (ph, th, p, t) = (pi_hat.matrix(), theta_hat.matrix(), pi_true.matrix(), theta_true.matrix());
    if ph.shape() != p.shape() || th.shape() != t.shape() || p.cols() != t.cols() {
        return Err(EvaluationError::Dimension(format!(
            "Pi {:?} vs {:?}, Theta {:?} vs {:?}",
            ph.shape(),
            p.shape(),
            th.shape(),
            t.shape()
        )));
    }
    let k = p.cols();
    let greedy = k > MAX_EXHAUSTIVE_K;
    let permutation = if greedy {
        warn!("K = {k} exceeds {MAX_EXHAUSTIVE_K}; aligning profiles greedily by Theta correlation");
        greedy_permutation(th, t)
    } else {
        best_permutation(&pairing_costs(ph, th, p, t))
    };
    Ok(AlignedComparison {
        mae_pi: mean_absolute_error(&ph.select_columns(&permutation), p),
        mae_theta: mean_absolute_error(&th.select_columns(&permutation), t),
        permutation,
        greedy,
    })
}

/// `(1/NJ) Σ |(Π̂Θ̂ᵀ)_ij − R_ij|`.
pub fn reconstruction_error(
    pi_hat: &MembershipMatrix,
    theta_hat: &ItemParamMatrix,
    r: &ResponseMatrix,
) -> Result<f64, EvaluationError> {
    let fitted = estimator::reconstruct(pi_hat, theta_hat)
        .map_err(|e| EvaluationError::Dimension(e.to_string()))?;
    if fitted.shape() != r.matrix().shape() {
        return Err(EvaluationError::Dimension(format!(
            "fitted {:?} vs data {:?}",
            fitted.shape(),
            r.matrix().shape()
        )));
    }
    Ok(mean_absolute_error(&fitted, r.matrix()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepEntry {
    pub k: usize,
    pub reconstruction_error: Option<f64>,
    pub failure: Option<String>,
}

/// Fits each candidate K and records the reconstruction error.
pub fn k_sweep(r: &ResponseMatrix, base: &FitConfig, ks: &[usize]) -> Vec<KSweepEntry> {
    ks.iter()
        .map(|&k| {
            let cfg = FitConfig { k, ..base.clone() };
            match estimator::fit(r, &cfg) {
                Ok(res) => KSweepEntry {
                    k,
                    reconstruction_error: reconstruction_error(&res.pi_hat, &res.theta_hat, r).ok(),
                    failure: None,
                },
                Err(e) => KSweepEntry {
                    k,
                    reconstruction_error: None,
                    failure: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// K with the smallest reconstruction error; earliest entry wins ties.
pub fn best_k(entries: &[KSweepEntry]) -> Option<usize> {
    entries
        .iter()
        .filter_map(|e| e.reconstruction_error.map(|v| (e.k, v)))
        .fold(None, |acc: Option<(usize, f64)>, (k, v)| match acc {
            Some((_, bv)) if bv <= v => acc,
            _ => Some((k, v)),
        })
        .map(|(k, _)| k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub mean: f64,
    pub quartiles: Quartiles,
}

impl StatSummary {
    pub fn of(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let mean = if values.is_empty() {
            f64::NAN
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        Self {
            mean,
            quartiles: Quartiles {
                q25: quantile(&sorted, 0.25),
                median: quantile(&sorted, 0.5),
                q75: quantile(&sorted, 0.75),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub mae_pi: Option<f64>,
    pub mae_theta: Option<f64>,
    /// Wall-clock seconds spent in the fit.
    pub seconds: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub sim: SimConfig,
    pub fit: FitConfig,
    pub records: Vec<ReplicationRecord>,
    pub failures: usize,
    pub mae_pi: StatSummary,
    pub mae_theta: StatSummary,
    pub seconds: StatSummary,
}

impl ReplicationSummary {
    fn from_records(sim: SimConfig, fit: FitConfig, records: Vec<ReplicationRecord>) -> Self {
        let pis: Vec<f64> = records.iter().filter_map(|r| r.mae_pi).collect();
        let thetas: Vec<f64> = records.iter().filter_map(|r| r.mae_theta).collect();
        let secs: Vec<f64> = records.iter().filter(|r| r.failure.is_none()).map(|r| r.seconds).collect();
        Self {
            failures: records.iter().filter(|r| r.failure.is_some()).count(),
            mae_pi: StatSummary::of(&pis),
            mae_theta: StatSummary::of(&thetas),
            seconds: StatSummary::of(&secs),
            sim,
            fit,
            records,
        }
    }
}

fn run_one(sim: &SimConfig, fit_cfg: &FitConfig, rep: usize) -> ReplicationRecord {
    let sim = sim.clone().with_stream(rep as u64);
    let data = match simulation::generate(&sim) {
        Ok(d) => d,
        Err(e) => {
            return ReplicationRecord {
                replication: rep,
                mae_pi: None,
                mae_theta: None,
                seconds: 0.0,
                failure: Some(e.to_string()),
            }
        }
    };
    let start = Instant::now();
    let fitted = estimator::fit(&data.r, fit_cfg);
    let seconds = start.elapsed().as_secs_f64();
    match fitted.map_err(|e| e.to_string()).and_then(|res| {
        align(&res.pi_hat, &res.theta_hat, &data.pi_true, &data.theta_true).map_err(|e| e.to_string())
    }) {
        Ok(cmp) => ReplicationRecord {
            replication: rep,
            mae_pi: Some(cmp.mae_pi),
            mae_theta: Some(cmp.mae_theta),
            seconds,
            failure: None,
        },
        Err(e) => ReplicationRecord {
            replication: rep,
            mae_pi: None,
            mae_theta: None,
            seconds,
            failure: Some(e),
        },
    }
}

/// Runs `reps` replications of one simulation cell. Replication `i` uses
/// random stream `i` of `sim.seed`, so results do not depend on scheduling.
pub fn run_replications(
    sim: &SimConfig,
    fit_cfg: &FitConfig,
    reps: usize,
    parallel: bool,
) -> Result<ReplicationSummary, EvaluationError> {
    if reps == 0 {
        return Err(EvaluationError::NoReplications);
    }
    let records: Vec<ReplicationRecord> = if parallel {
        (0..reps).into_par_iter().map(|i| run_one(sim, fit_cfg, i)).collect()
    } else {
        (0..reps).map(|i| run_one(sim, fit_cfg, i)).collect()
    };
    Ok(ReplicationSummary::from_records(sim.clone(), fit_cfg.clone(), records))
}

/// One summary per grid cell, in grid order.
pub fn run_grid(
    grid: &[SimConfig],
    fit_cfg: &FitConfig,
    reps: usize,
    parallel: bool,
) -> Result<Vec<ReplicationSummary>, EvaluationError> {
    grid.iter()
        .map(|sim| {
            let cfg = FitConfig { k: sim.k, ..fit_cfg.clone() };
            run_replications(sim, &cfg, reps, parallel)
        })
        .collect()
}
