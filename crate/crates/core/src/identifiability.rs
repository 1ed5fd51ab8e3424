//! Identifiability checks for a GoM parameter set.
//!
//! Covers pure-subject detection, the rank/affine classification of the item
//! parameter matrix, conditioning diagnostics, and the explicit construction
//! of a second valid parameter set when one profile has no pure subject.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{ItemParamMatrix, MembershipMatrix, ModelError};
use crate::linalg::{self, DenseMatrix, LinalgError};

/// Default relative tolerance for the rank and affine tests.
pub const DEFAULT_TOLERANCE: f64 = 1e-8;

/// κ above this raises a conditioning warning.
pub const KAPPA_WARNING: f64 = 10.0;

/// `σ_K/√n` below this raises a conditioning warning.
pub const SCALED_SIGMA_WARNING: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdentifiabilityError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("alternative parameters invalid: {which} entry ({row}, {col}) = {value}")]
    Validity {
        which: &'static str,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdentifiabilityCase {
    /// rank(Θ) = K.
    FullRankA,
    /// rank(Θ) = K − 1 and no column is an affine combination of the others.
    RankDeficientIdentifiableB,
    /// Any other rank configuration.
    NotIdentifiableC,
    /// Some singular value sits too close to the rank cutoff to decide.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityVerdict {
    pub case: IdentifiabilityCase,
    pub rank_theta: usize,
    /// Per column: is it an affine combination of the other columns.
    pub affine_flags: Vec<bool>,
    /// Per profile: lowest index of a pure subject, when Π was supplied.
    pub pure_subject_indices: Vec<Option<usize>>,
    /// Whether every profile has a pure subject; `None` without Π.
    pub pure_subject_condition: Option<bool>,
    /// Lowest index of a subject with positive membership in every profile.
    pub completely_mixed_subject: Option<usize>,
}

/// For each profile, the lowest subject index with `π_ik ≥ 1 − tol`.
pub fn find_pure_subjects(pi: &MembershipMatrix, tol: f64) -> Vec<Option<usize>> {
    let m = pi.matrix();
    (0..m.cols())
        .map(|k| (0..m.rows()).find(|&i| m.get(i, k) >= 1.0 - tol))
        .collect()
}

pub fn find_completely_mixed_subject(pi: &MembershipMatrix) -> Option<usize> {
    let m = pi.matrix();
    (0..m.rows()).find(|&i| m.row(i).iter().all(|&v| v > 0.0))
}

/// Least-squares test of whether column `k` is an affine combination of the
/// remaining columns: solves `[Θ₋ₖ; 1ᵀ] a = [θₖ; 1]` and compares the
/// residual with `tol · ‖θₖ‖`.
pub fn is_affine_combination(theta: &DenseMatrix, k: usize, tol: f64) -> bool {
    let (j, kk) = theta.shape();
    let others: Vec<usize> = (0..kk).filter(|&c| c != k).collect();
    if others.is_empty() {
        return false;
    }
    let a = nalgebra::DMatrix::from_fn(j + 1, others.len(), |r, c| {
        if r < j { theta.get(r, others[c]) } else { 1.0 }
    });
    let b = nalgebra::DVector::from_fn(j + 1, |r, _| if r < j { theta.get(r, k) } else { 1.0 });
    let coef = linalg::least_squares(&a, &b, 1e-12);
    let residual = (&a * coef - &b).norm();
    let target = theta.column(k).iter().map(|v| v * v).sum::<f64>().sqrt();
    residual < tol * target.max(f64::MIN_POSITIVE)
}

/// Rank/affine classification of the item parameter matrix.
pub fn classify_theta(theta: &ItemParamMatrix, k: usize, tol: f64) -> IdentifiabilityVerdict {
    let m = theta.matrix();
    let sv = linalg::singular_values(m);
    let rank = linalg::numerical_rank(m, tol);
    let affine_flags: Vec<bool> = (0..m.cols()).map(|c| is_affine_combination(m, c, tol)).collect();

    let top = sv.first().copied().unwrap_or(0.0);
    let borderline = top > 0.0
        && sv
            .iter()
            .any(|&s| s / top > tol / 10.0 && s / top < tol * 10.0);

    let case = if m.cols() != k || borderline {
        IdentifiabilityCase::Inconclusive
    } else if rank == k {
        IdentifiabilityCase::FullRankA
    } else if rank + 1 == k && !affine_flags.iter().any(|&f| f) {
        IdentifiabilityCase::RankDeficientIdentifiableB
    } else {
        IdentifiabilityCase::NotIdentifiableC
    };
    IdentifiabilityVerdict {
        case,
        rank_theta: rank,
        affine_flags,
        pure_subject_indices: vec![None; k],
        pure_subject_condition: None,
        completely_mixed_subject: None,
    }
}

/// Classification plus the membership-side checks when Π is available.
pub fn verdict(
    theta: &ItemParamMatrix,
    pi: Option<&MembershipMatrix>,
    k: usize,
    tol: f64,
    pure_tol: f64,
) -> IdentifiabilityVerdict {
    let mut v = classify_theta(theta, k, tol);
    if let Some(pi) = pi {
        v.pure_subject_indices = find_pure_subjects(pi, pure_tol);
        v.pure_subject_condition = Some(v.pure_subject_indices.iter().all(Option::is_some));
        v.completely_mixed_subject = find_completely_mixed_subject(pi);
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionDiagnostics {
    /// κ(Π); infinite when Π is rank deficient.
    pub kappa_pi: f64,
    pub kappa_theta: f64,
    pub sigma_k_pi_over_sqrt_n: f64,
    pub sigma_k_theta_over_sqrt_j: f64,
    pub pi_rank_deficient: bool,
    pub theta_rank_deficient: bool,
    pub warnings: Vec<String>,
}

fn kappa_and_sigma_k(m: &DenseMatrix) -> (f64, f64, bool) {
    let s = linalg::singular_values(m);
    let top = s.first().copied().unwrap_or(0.0);
    let k = m.cols();
    let sigma_k = if s.len() >= k { s[k - 1] } else { 0.0 };
    let deficient = s.len() < k || top == 0.0 || sigma_k <= top * DEFAULT_TOLERANCE;
    let kappa = if deficient { f64::INFINITY } else { top / sigma_k };
    (kappa, sigma_k, deficient)
}

pub fn condition_diagnostics(pi: &MembershipMatrix, theta: &ItemParamMatrix) -> ConditionDiagnostics {
    let (kappa_pi, sk_pi, def_pi) = kappa_and_sigma_k(pi.matrix());
    let (kappa_theta, sk_theta, def_theta) = kappa_and_sigma_k(theta.matrix());
    let ratio_pi = sk_pi / (pi.n_subjects() as f64).sqrt();
    let ratio_theta = sk_theta / (theta.n_items() as f64).sqrt();
    let mut warnings = Vec::new();
    for (name, kappa, deficient) in [("Pi", kappa_pi, def_pi), ("Theta", kappa_theta, def_theta)] {
        if deficient {
            warnings.push(format!("{name} is rank deficient"));
        } else if kappa > KAPPA_WARNING {
            warnings.push(format!("kappa({name}) = {kappa:.3} exceeds {KAPPA_WARNING}"));
        }
    }
    if ratio_pi < SCALED_SIGMA_WARNING {
        warnings.push(format!("sigma_K(Pi)/sqrt(N) = {ratio_pi:.4} below {SCALED_SIGMA_WARNING}"));
    }
    if ratio_theta < SCALED_SIGMA_WARNING {
        warnings.push(format!(
            "sigma_K(Theta)/sqrt(J) = {ratio_theta:.4} below {SCALED_SIGMA_WARNING}"
        ));
    }
    ConditionDiagnostics {
        kappa_pi,
        kappa_theta,
        sigma_k_pi_over_sqrt_n: ratio_pi,
        sigma_k_theta_over_sqrt_j: ratio_theta,
        pi_rank_deficient: def_pi,
        theta_rank_deficient: def_theta,
        warnings,
    }
}

/// The K×K mixing matrix
/// `[[1 + (K−1)ε², −ε²·1ᵀ], [0, ε·11ᵀ + (1 − (K−1)ε)·I]]`.
pub fn mixing_matrix(k: usize, eps: f64) -> DenseMatrix {
    let e2 = eps * eps;
    DenseMatrix::from_fn(k, k, |a, b| match (a, b) {
        (0, 0) => 1.0 + (k as f64 - 1.0) * e2,
        (0, _) => -e2,
        (_, 0) => 0.0,
        (a, b) if a == b => eps + 1.0 - (k as f64 - 1.0) * eps,
        _ => eps,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlternativeParameters {
    pub pi: MembershipMatrix,
    pub theta: ItemParamMatrix,
    pub mixing: DenseMatrix,
    /// `max |Π̃Θ̃ᵀ − ΠΘᵀ|`.
    pub product_deviation: f64,
}

/// Builds `(Π M_ε, Θ M_ε⁻ᵀ)` for a parameter set whose first profile has no
/// pure subject.
pub fn construct_alternative(
    pi: &MembershipMatrix,
    theta: &ItemParamMatrix,
    eps: f64,
) -> Result<AlternativeParameters, IdentifiabilityError> {
    let k = pi.n_profiles();
    if theta.n_profiles() != k {
        return Err(IdentifiabilityError::Precondition(format!(
            "Pi has {k} profiles but Theta has {}",
            theta.n_profiles()
        )));
    }
    if k < 2 {
        return Err(IdentifiabilityError::Precondition(
            "at least two profiles are required".into(),
        ));
    }
    if eps.is_nan() || eps < 0.0 || eps > 1.0 / (k as f64 - 1.0) {
        return Err(IdentifiabilityError::Precondition(format!(
            "eps = {eps} outside [0, 1/(K-1)]"
        )));
    }
    let p = pi.matrix();
    let max_first = (0..p.rows()).map(|i| p.get(i, 0)).fold(0.0, f64::max);
    let delta = 1.0 - max_first;
    if delta <= 0.0 {
        let i = (0..p.rows()).find(|&i| p.get(i, 0) >= 1.0).unwrap_or(0);
        return Err(IdentifiabilityError::Precondition(format!(
            "profile 1 has a pure subject (row {})",
            i + 1
        )));
    }
    if eps > 0.0 && eps >= delta {
        return Err(IdentifiabilityError::Precondition(format!(
            "eps = {eps} must be below delta = 1 - max_i pi_i1 = {delta}"
        )));
    }
    let t = theta.matrix();
    for j in 0..t.rows() {
        for c in 0..k {
            let v = t.get(j, c);
            if !(v > 0.0 && v < 1.0) {
                return Err(IdentifiabilityError::Precondition(format!(
                    "theta entry ({}, {}) = {v} is not in (0, 1)",
                    j + 1,
                    c + 1
                )));
            }
        }
    }

    let mixing = mixing_matrix(k, eps);
    let mixing_inv = linalg::invert_square(&mixing)?;
    let new_pi = p.matmul(&mixing)?;
    // Theta must take the inverse transpose for the product to survive.
    let new_theta = t.matmul(&mixing_inv.transpose())?;

    // Exact zeros can come out as tiny negatives; only real escapes are errors.
    let slack = 1e-12;
    let new_pi = snap_unit(new_pi, slack, "Pi")?;
    let new_theta = snap_unit(new_theta, slack, "Theta")?;

    let original = p.matmul(&t.transpose())?;
    let rebuilt = new_pi.matmul(&new_theta.transpose())?;
    let product_deviation = rebuilt.max_abs_diff(&original);

    Ok(AlternativeParameters {
        pi: MembershipMatrix::with_tolerance(new_pi, 1e-10)?,
        theta: ItemParamMatrix::new(new_theta)?,
        mixing,
        product_deviation,
    })
}

fn snap_unit(m: DenseMatrix, slack: f64, which: &'static str) -> Result<DenseMatrix, IdentifiabilityError> {
    for i in 0..m.rows() {
        for (c, &v) in m.row(i).iter().enumerate() {
            if v < -slack || v > 1.0 + slack {
                return Err(IdentifiabilityError::Validity {
                    which,
                    row: i + 1,
                    col: c + 1,
                    value: v,
                });
            }
        }
    }
    Ok(DenseMatrix::from_fn(m.rows(), m.cols(), |i, c| m.get(i, c).clamp(0.0, 1.0)))
}

/// Runs [`construct_alternative`] treating `profile` (0-based) as the one
/// without a pure subject, then restores the original column order.
pub fn construct_alternative_for_profile(
    pi: &MembershipMatrix,
    theta: &ItemParamMatrix,
    profile: usize,
    eps: f64,
) -> Result<AlternativeParameters, IdentifiabilityError> {
    let k = pi.n_profiles();
    if profile >= k {
        return Err(IdentifiabilityError::Precondition(format!(
            "profile {} out of range 1..={k}",
            profile + 1
        )));
    }
    // swap `profile` into the first position; a transposition is its own inverse
    let mut order: Vec<usize> = (0..k).collect();
    order.swap(0, profile);
    let pi_p = MembershipMatrix::with_tolerance(pi.matrix().select_columns(&order), f64::INFINITY)?;
    let theta_p = ItemParamMatrix::new(theta.matrix().select_columns(&order))?;
    let alt = construct_alternative(&pi_p, &theta_p, eps)?;
    let mixing = alt.mixing.select_rows(&order).select_columns(&order);
    Ok(AlternativeParameters {
        pi: MembershipMatrix::with_tolerance(alt.pi.matrix().select_columns(&order), 1e-10)?,
        theta: ItemParamMatrix::new(alt.theta.matrix().select_columns(&order))?,
        mixing,
        product_deviation: alt.product_deviation,
    })
}

/// Item parameter matrices from the three worked 4×3 examples.
pub mod examples {
    use crate::linalg::DenseMatrix;

    pub fn example_one() -> DenseMatrix {
        DenseMatrix::from_rows(&[
            [0.2, 0.8, 0.8],
            [0.2, 0.8, 0.2],
            [0.8, 0.2, 0.8],
            [0.8, 0.2, 0.2],
        ])
        .expect("static block")
    }

    pub fn example_two() -> DenseMatrix {
        DenseMatrix::from_rows(&[
            [0.2, 0.8, 0.8],
            [0.2, 0.8, 0.8],
            [0.8, 0.2, 0.8],
            [0.8, 0.2, 0.8],
        ])
        .expect("static block")
    }

    pub fn example_three() -> DenseMatrix {
        DenseMatrix::from_rows(&[
            [0.2, 0.8, 0.5],
            [0.2, 0.8, 0.5],
            [0.8, 0.2, 0.5],
            [0.8, 0.2, 0.5],
        ])
        .expect("static block")
    }
}

#[cfg(test)]
mod tests {
    use super::examples::*;
    use super::*;

    fn theta(m: DenseMatrix) -> ItemParamMatrix {
        ItemParamMatrix::new(m).unwrap()
    }

    fn pi(rows: &[&[f64]]) -> MembershipMatrix {
        MembershipMatrix::new(DenseMatrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn worked_examples_classify() {
        let a = classify_theta(&theta(example_one()), 3, DEFAULT_TOLERANCE);
        assert_eq!(a.case, IdentifiabilityCase::FullRankA);
        assert_eq!(a.rank_theta, 3);
        let b = classify_theta(&theta(example_two()), 3, DEFAULT_TOLERANCE);
        assert_eq!(b.case, IdentifiabilityCase::RankDeficientIdentifiableB);
        assert_eq!(b.rank_theta, 2);
        assert_eq!(b.affine_flags, vec![false; 3]);
        let c = classify_theta(&theta(example_three()), 3, DEFAULT_TOLERANCE);
        assert_eq!(c.case, IdentifiabilityCase::NotIdentifiableC);
        assert!(c.affine_flags[2]);
    }

    #[test]
    fn rank_one_is_case_c() {
        let m = DenseMatrix::from_fn(8, 3, |_, c| [0.8, 0.5, 0.2][c]);
        let v = classify_theta(&theta(m), 3, DEFAULT_TOLERANCE);
        assert_eq!(v.rank_theta, 1);
        assert_eq!(v.case, IdentifiabilityCase::NotIdentifiableC);
    }

    #[test]
    fn borderline_rank_is_inconclusive() {
        let mut m = example_two();
        // nudge the dependent column so σ₃/σ₁ lands near the cutoff
        m.set(0, 2, 0.8 + 2e-8);
        let v = classify_theta(&theta(m), 3, DEFAULT_TOLERANCE);
        assert_eq!(v.case, IdentifiabilityCase::Inconclusive);
    }

    #[test]
    fn pure_subject_examples() {
        let p = pi(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[0.2, 0.3, 0.5]]);
        assert_eq!(find_pure_subjects(&p, 0.0), vec![Some(0), Some(1), Some(2)]);
        let mixed = pi(&[&[0.6, 0.2, 0.2], &[0.2, 0.6, 0.2], &[0.3, 0.3, 0.4]]);
        assert_eq!(find_pure_subjects(&mixed, 0.05), vec![None, None, None]);
        let single = pi(&[&[1.0, 0.0]]);
        assert_eq!(find_pure_subjects(&single, 0.0), vec![Some(0), None]);
        assert_eq!(find_completely_mixed_subject(&p), Some(3));
    }

    #[test]
    fn stacked_identity_conditioning() {
        let m = 4;
        let k = 3;
        let p = MembershipMatrix::new(DenseMatrix::from_fn(m * k, k, |i, c| {
            if i % k == c { 1.0 } else { 0.0 }
        }))
        .unwrap();
        let d = condition_diagnostics(&p, &theta(example_one()));
        assert!((d.kappa_pi - 1.0).abs() < 1e-12);
        assert!((d.sigma_k_pi_over_sqrt_n - 1.0 / (k as f64).sqrt()).abs() < 1e-12);

        let i2 = MembershipMatrix::new(DenseMatrix::identity(2)).unwrap();
        let t2 = theta(DenseMatrix::from_rows(&[[0.2, 0.7], [0.6, 0.1]]).unwrap());
        assert!((condition_diagnostics(&i2, &t2).kappa_pi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_theta_flagged() {
        let p = pi(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let d = condition_diagnostics(&p, &theta(example_three()));
        assert!(d.theta_rank_deficient);
        assert!(d.kappa_theta.is_infinite());
        assert!(!d.warnings.is_empty());
    }

    #[test]
    fn mixing_matrix_closed_form() {
        // K = 3, ε = 0.1: 1 + 2·0.01 = 1.02, −0.01, 0.1 + 1 − 0.2 = 0.9
        let m = mixing_matrix(3, 0.1);
        let expected = DenseMatrix::from_rows(&[
            [1.02, -0.01, -0.01],
            [0.0, 0.9, 0.1],
            [0.0, 0.1, 0.9],
        ])
        .unwrap();
        assert!(m.max_abs_diff(&expected) < 1e-15);
        assert_eq!(mixing_matrix(4, 0.0), DenseMatrix::identity(4));
        for i in 0..3 {
            assert!((m.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    fn no_pure_first_profile() -> (MembershipMatrix, ItemParamMatrix) {
        let p = pi(&[
            &[0.9, 0.1, 0.0],
            &[0.0, 1.0, 0.0],
            &[0.0, 0.0, 1.0],
            &[0.3, 0.3, 0.4],
        ]);
        let t = theta(DenseMatrix::from_rows(&[
            [0.3, 0.6, 0.5],
            [0.4, 0.5, 0.6],
            [0.55, 0.45, 0.5],
        ])
        .unwrap());
        (p, t)
    }

    #[test]
    fn alternative_with_zero_eps_is_identity() {
        let (p, t) = no_pure_first_profile();
        let alt = construct_alternative(&p, &t, 0.0).unwrap();
        assert!(alt.pi.matrix().max_abs_diff(p.matrix()) < 1e-15);
        assert!(alt.theta.matrix().max_abs_diff(t.matrix()) < 1e-15);
    }

    #[test]
    fn alternative_preserves_product() {
        let (p, t) = no_pure_first_profile();
        let alt = construct_alternative(&p, &t, 0.05).unwrap();
        assert!(alt.product_deviation < 1e-12);
        assert!(alt.pi.matrix().max_abs_diff(p.matrix()) > 1e-3);
    }

    #[test]
    fn alternative_preconditions() {
        let (_, t) = no_pure_first_profile();
        let pure = pi(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert!(matches!(
            construct_alternative(&pure, &t, 0.05),
            Err(IdentifiabilityError::Precondition(_))
        ));
        let (p, _) = no_pure_first_profile();
        // delta = 0.1
        assert!(matches!(
            construct_alternative(&p, &t, 0.2),
            Err(IdentifiabilityError::Precondition(_))
        ));
        let boundary = theta(DenseMatrix::from_rows(&[[0.0, 0.5, 0.5]]).unwrap());
        assert!(matches!(
            construct_alternative(&p, &boundary, 0.05),
            Err(IdentifiabilityError::Precondition(_))
        ));
    }

    #[test]
    fn alternative_validity_error() {
        let p = pi(&[&[0.5, 0.5, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let t = theta(DenseMatrix::from_rows(&[[0.5, 0.99, 0.01]]).unwrap());
        assert!(matches!(
            construct_alternative(&p, &t, 0.3),
            Err(IdentifiabilityError::Validity { which: "Theta", .. })
        ));
    }

    #[test]
    fn alternative_for_other_profile() {
        // profile 2 lacks a pure subject here
        let p = pi(&[&[1.0, 0.0, 0.0], &[0.1, 0.9, 0.0], &[0.0, 0.0, 1.0], &[0.3, 0.3, 0.4]]);
        let t = theta(DenseMatrix::from_rows(&[[0.3, 0.6, 0.5], [0.4, 0.5, 0.6]]).unwrap());
        let alt = construct_alternative_for_profile(&p, &t, 1, 0.05).unwrap();
        assert!(alt.product_deviation < 1e-12);
        // the profile-2 column is only rescaled; the pure row of profile 1 becomes mixed
        assert_eq!(alt.pi.matrix().get(0, 1), 0.0);
        assert!(alt.pi.matrix().get(0, 0) < 1.0);
        assert!((alt.pi.matrix().get(1, 1) - 0.9 * (1.0 + 2.0 * 0.0025)).abs() < 1e-12);
    }
}
