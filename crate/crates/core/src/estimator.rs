//! Model types and the end-to-end spectral fit.
//!
//! The pipeline is: top-K SVD of the response matrix, optional pruning of
//! isolated rows of `Û`, sequential projection to find one pure subject per
//! profile, then closed-form memberships `Û (Û_Ŝ)⁻¹` (clamped and
//! renormalized) and item parameters `V̂ Σ̂ Ûᵀ Π̂ (Π̂ᵀ Π̂)⁻¹` (truncated to
//! `[ε, 1 − ε]`).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, DenseMatrix, LinalgError, SvdFactors, SvdOptions};
use crate::vertex_hunting::{self, PruneConfig, PruneReport, VertexError, VertexSet};

/// Tolerance on membership row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Rows of the clamped membership estimate summing to at most this are
/// replaced by the uniform vector.
pub const DEGENERATE_ROW_SUM: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{0}")]
    Linalg(#[from] LinalgError),
    #[error("entry ({row}, {col}) = {value} is outside {domain}")]
    Domain {
        row: usize,
        col: usize,
        value: f64,
        domain: &'static str,
    },
    #[error("row {row} sums to {sum}, expected 1")]
    RowSum { row: usize, sum: f64 },
}

/// N×J binary response matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResponseMatrix(DenseMatrix);

impl ResponseMatrix {
    pub fn new(m: DenseMatrix) -> Result<Self, ModelError> {
        for i in 0..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                if v != 0.0 && v != 1.0 {
                    return Err(ModelError::Domain {
                        row: i,
                        col: j,
                        value: v,
                        domain: "{0, 1}",
                    });
                }
            }
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_inner(self) -> DenseMatrix {
        self.0
    }
}

/// N×K row-stochastic membership scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MembershipMatrix(DenseMatrix);

impl MembershipMatrix {
    pub fn new(m: DenseMatrix) -> Result<Self, ModelError> {
        Self::with_tolerance(m, ROW_SUM_TOLERANCE)
    }

    /// Like [`MembershipMatrix::new`] with a caller-chosen row-sum tolerance,
    /// for data read back from rounded text files.
    pub fn with_tolerance(m: DenseMatrix, tol: f64) -> Result<Self, ModelError> {
        for i in 0..m.rows() {
            let row = m.row(i);
            if let Some((j, &v)) = row.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
                return Err(ModelError::Domain {
                    row: i,
                    col: j,
                    value: v,
                    domain: "[0, 1]",
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(ModelError::RowSum { row: i, sum });
            }
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_inner(self) -> DenseMatrix {
        self.0
    }

    pub fn n_subjects(&self) -> usize {
        self.0.rows()
    }

    pub fn n_profiles(&self) -> usize {
        self.0.cols()
    }
}

/// J×K Bernoulli item parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemParamMatrix(DenseMatrix);

impl ItemParamMatrix {
    pub fn new(m: DenseMatrix) -> Result<Self, ModelError> {
        for i in 0..m.rows() {
            if let Some((j, &v)) = m.row(i).iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
                return Err(ModelError::Domain {
                    row: i,
                    col: j,
                    value: v,
                    domain: "[0, 1]",
                });
            }
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_inner(self) -> DenseMatrix {
        self.0
    }

    pub fn n_items(&self) -> usize {
        self.0.rows()
    }

    pub fn n_profiles(&self) -> usize {
        self.0.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub k: usize,
    pub epsilon: f64,
    pub prune: PruneConfig,
    pub prune_enabled: bool,
    pub svd: SvdOptions,
}

impl FitConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            epsilon: 0.001,
            prune: PruneConfig::default(),
            prune_enabled: true,
            svd: SvdOptions::default(),
        }
    }

    pub fn without_pruning(mut self) -> Self {
        self.prune_enabled = false;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if self.k == 0 {
            return Err(FitError::Config("K must be at least 1".into()));
        }
        if !(0.0..0.5).contains(&self.epsilon) {
            return Err(FitError::Config(format!(
                "epsilon = {} is not in [0, 0.5)",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Pipeline stage names used in error reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Svd,
    Prune,
    VertexHunting,
    Membership,
    ItemParameters,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Svd => "svd",
            Stage::Prune => "prune",
            Stage::VertexHunting => "vertex_hunting",
            Stage::Membership => "membership",
            Stage::ItemParameters => "item_parameters",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("invalid fit configuration: {0}")]
    Config(String),
    #[error("svd stage: {0}")]
    Svd(#[source] LinalgError),
    #[error("prune stage: {0}")]
    Prune(#[source] VertexError),
    #[error("vertex hunting stage: {0}")]
    VertexHunting(#[source] VertexError),
    #[error("membership stage: degenerate vertex set: {0}")]
    DegenerateVertices(#[source] LinalgError),
    #[error("item parameter stage: collinear memberships: {0}")]
    CollinearMembership(#[source] LinalgError),
}

impl FitError {
    pub fn stage(&self) -> Stage {
        match self {
            FitError::Config(_) => Stage::Config,
            FitError::Svd(_) => Stage::Svd,
            FitError::Prune(_) => Stage::Prune,
            FitError::VertexHunting(_) => Stage::VertexHunting,
            FitError::DegenerateVertices(_) => Stage::Membership,
            FitError::CollinearMembership(_) => Stage::ItemParameters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// `σ̂_K`.
    pub sigma_k: f64,
    /// `σ̂_{K+1}` when `K < min(N, J)`.
    pub sigma_k_plus_one: Option<f64>,
    /// `σ̂_K / σ̂_{K+1}`.
    pub singular_gap_ratio: Option<f64>,
    pub pi_clamped_entries: usize,
    pub pi_degenerate_rows: Vec<usize>,
    pub theta_clamped_low: usize,
    pub theta_clamped_high: usize,
    /// Condition number of `Û_Ŝ`.
    pub vertex_condition: f64,
    /// Condition number of `Π̂ᵀ Π̂`.
    pub membership_gram_condition: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub pi_hat: MembershipMatrix,
    pub theta_hat: ItemParamMatrix,
    pub s_hat: VertexSet,
    pub svd: SvdFactors,
    pub prune_report: PruneReport,
    pub diagnostics: FitDiagnostics,
}

/// Fits a binary response matrix.
pub fn fit(r: &ResponseMatrix, cfg: &FitConfig) -> Result<FitResult, FitError> {
    fit_matrix(r.matrix(), cfg)
}

/// Fits any matrix with entries in `[0, 1]`, e.g. the noiseless mean `ΠΘᵀ`.
pub fn fit_matrix(data: &DenseMatrix, cfg: &FitConfig) -> Result<FitResult, FitError> {
    cfg.validate()?;
    let (n, j) = data.shape();
    if cfg.k > n.min(j) {
        return Err(FitError::Config(format!(
            "K = {} exceeds min(N, J) = {}",
            cfg.k,
            n.min(j)
        )));
    }
    // One extra triplet, when available, feeds the spectral gap diagnostic.
    let wanted = (cfg.k + 1).min(n.min(j));
    let full = linalg::truncated_svd_with(data, wanted, &cfg.svd).map_err(FitError::Svd)?;
    let next_sigma = (wanted > cfg.k).then(|| full.sigma[cfg.k]);
    let mut result = fit_from_svd(full.truncate(cfg.k), cfg)?;
    result.diagnostics.sigma_k_plus_one = next_sigma;
    result.diagnostics.singular_gap_ratio =
        next_sigma.map(|s| if s > 0.0 { result.diagnostics.sigma_k / s } else { f64::INFINITY });
    Ok(result)
}

/// Runs everything after the SVD on precomputed factors.
pub fn fit_from_svd(svd: SvdFactors, cfg: &FitConfig) -> Result<FitResult, FitError> {
    cfg.validate()?;
    if svd.rank() != cfg.k {
        return Err(FitError::Config(format!(
            "factors have rank {}, expected K = {}",
            svd.rank(),
            cfg.k
        )));
    }
    let prune_report = if cfg.prune_enabled {
        vertex_hunting::prune(&svd.u, &cfg.prune).map_err(FitError::Prune)?
    } else {
        PruneReport::disabled(&svd.u)
    };
    let s_hat = vertex_hunting::spa(&svd.u, &prune_report.pruned_indices, cfg.k)
        .map_err(FitError::VertexHunting)?;
    let pi = estimate_pi(&svd.u, &s_hat)?;
    let theta = estimate_theta(&svd, &pi.pi, cfg.epsilon)?;

    let diagnostics = FitDiagnostics {
        sigma_k: svd.sigma[cfg.k - 1],
        sigma_k_plus_one: None,
        singular_gap_ratio: None,
        pi_clamped_entries: pi.clamped_entries,
        pi_degenerate_rows: pi.degenerate_rows,
        theta_clamped_low: theta.clamped_low,
        theta_clamped_high: theta.clamped_high,
        vertex_condition: pi.vertex_condition,
        membership_gram_condition: theta.gram_condition,
    };
    Ok(FitResult {
        pi_hat: pi.pi,
        theta_hat: theta.theta,
        s_hat,
        svd,
        prune_report,
        diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiEstimate {
    pub pi: MembershipMatrix,
    /// Negative entries of `Π̃` set to zero.
    pub clamped_entries: usize,
    /// Rows that fell back to the uniform vector.
    pub degenerate_rows: Vec<usize>,
    pub vertex_condition: f64,
}

/// `Π̂ = normalize((Û (Û_Ŝ)⁻¹)₊)`.
pub fn estimate_pi(u_hat: &DenseMatrix, s_hat: &VertexSet) -> Result<PiEstimate, FitError> {
    let k = u_hat.cols();
    if s_hat.len() != k {
        return Err(FitError::Config(format!(
            "{} vertices for K = {k}",
            s_hat.len()
        )));
    }
    let vertex_block = u_hat.select_rows(&s_hat.indices);
    let vertex_condition = linalg::condition_number(&vertex_block);
    let inverse = linalg::invert_square(&vertex_block).map_err(FitError::DegenerateVertices)?;
    let raw = u_hat.matmul(&inverse).map_err(FitError::DegenerateVertices)?;

    let mut data = raw.into_vec();
    let mut clamped_entries = 0;
    let mut degenerate_rows = Vec::new();
    for (i, row) in data.chunks_mut(k).enumerate() {
        for v in row.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
                clamped_entries += 1;
            }
        }
        let sum: f64 = row.iter().sum();
        if sum <= DEGENERATE_ROW_SUM {
            row.fill(1.0 / k as f64);
            degenerate_rows.push(i);
        } else {
            row.iter_mut().for_each(|v| *v = (*v / sum).min(1.0));
        }
    }
    let pi = DenseMatrix::new(u_hat.rows(), k, data).map_err(FitError::DegenerateVertices)?;
    Ok(PiEstimate {
        pi: MembershipMatrix(pi),
        clamped_entries,
        degenerate_rows,
        vertex_condition,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaEstimate {
    pub theta: ItemParamMatrix,
    /// `Θ̃` before truncation.
    pub raw: DenseMatrix,
    pub clamped_low: usize,
    pub clamped_high: usize,
    pub gram_condition: f64,
}

/// `Θ̂ = clamp(V̂ Σ̂ Ûᵀ Π̂ (Π̂ᵀ Π̂)⁻¹, ε, 1 − ε)`.
pub fn estimate_theta(
    svd: &SvdFactors,
    pi_hat: &MembershipMatrix,
    epsilon: f64,
) -> Result<ThetaEstimate, FitError> {
    let pi = pi_hat.matrix();
    let gram = pi.tr_matmul(pi).map_err(FitError::CollinearMembership)?;
    let gram_condition = linalg::condition_number(&gram);
    let gram_inv = linalg::invert_square(&gram).map_err(FitError::CollinearMembership)?;
    // K×K core Σ̂ Ûᵀ Π̂ (Π̂ᵀΠ̂)⁻¹, then a single J×K product.
    let ut_pi = svd.u.tr_matmul(pi).map_err(FitError::CollinearMembership)?;
    let sigma_ut_pi = DenseMatrix::from_fn(ut_pi.rows(), ut_pi.cols(), |a, b| {
        svd.sigma[a] * ut_pi.get(a, b)
    });
    let core = sigma_ut_pi.matmul(&gram_inv).map_err(FitError::CollinearMembership)?;
    let raw = svd.v.matmul(&core).map_err(FitError::CollinearMembership)?;
    let (theta, clamped_low, clamped_high) = truncate_item_params(&raw, epsilon);
    Ok(ThetaEstimate {
        theta,
        raw,
        clamped_low,
        clamped_high,
        gram_condition,
    })
}

/// The vertex-only alternative `V̂ Σ̂ Û_Ŝᵀ` (untruncated).
pub fn theta_from_vertices(svd: &SvdFactors, s_hat: &VertexSet) -> DenseMatrix {
    let us = svd.u.select_rows(&s_hat.indices);
    let v_sigma = DenseMatrix::from_fn(svd.v.rows(), svd.rank(), |j, k| {
        svd.v.get(j, k) * svd.sigma[k]
    });
    v_sigma.matmul(&us.transpose()).expect("conforming factors")
}

/// Clamps every entry into `[ε, 1 − ε]`; returns the counts clamped low and high.
pub fn truncate_item_params(raw: &DenseMatrix, epsilon: f64) -> (ItemParamMatrix, usize, usize) {
    let (mut low, mut high) = (0, 0);
    let m = DenseMatrix::from_fn(raw.rows(), raw.cols(), |j, k| {
        let v = raw.get(j, k);
        if v < epsilon {
            low += 1;
            epsilon
        } else if v > 1.0 - epsilon {
            high += 1;
            1.0 - epsilon
        } else {
            v
        }
    });
    (ItemParamMatrix(m), low, high)
}

/// `Π Θᵀ`.
pub fn reconstruct(pi: &MembershipMatrix, theta: &ItemParamMatrix) -> Result<DenseMatrix, LinalgError> {
    pi.matrix().matmul(&theta.matrix().transpose())
}
