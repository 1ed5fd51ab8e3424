//! Randomized pipeline invariants shared by the property tests and the
//! acceptance harness.

#![allow(dead_code)]

use std::collections::BTreeSet;

use gom_core::estimator::fit_from_svd;
use gom_core::evaluation::align;
use gom_core::linalg::{self, DenseMatrix, SvdFactors};
use gom_core::simulation::{generate, rng_for, sample_dirichlet, SimConfig};
use gom_core::vertex_hunting::{prune, spa, PruneConfig};
use gom_core::{FitConfig, ItemParamMatrix, MembershipMatrix};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::seq::SliceRandom;
use rand::Rng;

pub const CASES: u32 = 256;

/// Simulated data small enough for hundreds of fits.
pub fn sim_params() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 40usize..160, 2usize..=4)
}

fn simulate(seed: u64, n: usize, k: usize) -> DenseMatrix {
    let j = (n / 3).max(2 * k);
    generate(&SimConfig::standard(n, j, k, seed)).unwrap().r.into_inner()
}

fn flip(svd: &SvdFactors, signs: &[bool]) -> SvdFactors {
    let s = |c: usize| if signs[c] { -1.0 } else { 1.0 };
    SvdFactors {
        u: DenseMatrix::from_fn(svd.u.rows(), svd.u.cols(), |i, c| s(c) * svd.u.get(i, c)),
        sigma: svd.sigma.clone(),
        v: DenseMatrix::from_fn(svd.v.rows(), svd.v.cols(), |i, c| s(c) * svd.v.get(i, c)),
    }
}

pub fn sign_flip_invariance(seed: u64, n: usize, k: usize, signs: Vec<bool>) -> Result<(), TestCaseError> {
    let r = simulate(seed, n, k);
    let cfg = FitConfig::new(k);
    let svd = linalg::truncated_svd(&r, k).unwrap();
    let base = fit_from_svd(svd.clone(), &cfg);
    let flipped = fit_from_svd(flip(&svd, &signs[..k]), &cfg);
    match (base, flipped) {
        (Ok(a), Ok(b)) => {
            prop_assert_eq!(&a.s_hat, &b.s_hat);
            prop_assert_eq!(&a.prune_report.pruned_indices, &b.prune_report.pruned_indices);
            let dp = a.pi_hat.matrix().max_abs_diff(b.pi_hat.matrix());
            let dt = a.theta_hat.matrix().max_abs_diff(b.theta_hat.matrix());
            prop_assert!(dp < 1e-9 && dt < 1e-9, "pi diff {}, theta diff {}", dp, dt);
        }
        (Err(a), Err(b)) => prop_assert_eq!(a.stage(), b.stage()),
        (a, b) => prop_assert!(false, "outcomes differ: {:?} vs {:?}", a.is_ok(), b.is_ok()),
    }
    Ok(())
}

pub fn output_domains(seed: u64, n: usize, k: usize, eps: f64) -> Result<(), TestCaseError> {
    let r = simulate(seed, n, k);
    let cfg = FitConfig::new(k).with_epsilon(eps);
    let fitted = gom_core::estimator::fit_matrix(&r, &cfg);
    prop_assert!(fitted.is_ok(), "fit failed: {:?}", fitted.as_ref().err());
    let res = fitted.unwrap();
    for row in res.pi_hat.matrix().row_iter() {
        let sum: f64 = row.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12, "row sum {}", sum);
        prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
    let t = res.theta_hat.matrix();
    prop_assert!(t.min_value() >= eps && t.max_value() <= 1.0 - eps);
    Ok(())
}

pub fn prune_params() -> impl Strategy<Value = (u64, usize, usize, usize, f64, f64)> {
    (any::<u64>(), 12usize..120, 1usize..=5, 1usize..11, 0.01f64..0.99, 0.01f64..0.99)
}

pub fn prune_cardinality(seed: u64, n: usize, k: usize, r: usize, q: f64, e: f64) -> Result<(), TestCaseError> {
    let mut rng = rng_for(seed, 0);
    // coarse grid values force ties now and then
    let u = DenseMatrix::from_fn(n, k, |_, _| (rng.random_range(-4i32..=4) as f64) * 0.25);
    let cfg = PruneConfig { r: r.min(n - 1), q, e };
    let rep = prune(&u, &cfg).unwrap();
    prop_assert!(rep.pruned_indices.is_subset(&rep.candidate_indices));
    prop_assert!(rep.candidate_indices.iter().all(|&i| i < n));
    prop_assert!(rep.candidate_indices.len() <= (q * n as f64).ceil() as usize);
    let bound = (e * rep.candidate_indices.len() as f64).ceil() as usize;
    prop_assert!(rep.pruned_indices.len() <= bound);
    Ok(())
}

pub fn spa_params() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 0usize..60, 2usize..=6)
}

pub fn spa_exact_recovery(seed: u64, extra: usize, k: usize) -> Result<(), TestCaseError> {
    let mut rng = rng_for(seed, 1);
    let n = k + extra;
    let mixed = sample_dirichlet(&vec![1.0; k], extra, &mut rng).unwrap();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    // order[p] for p < k holds the pure row of profile p
    let pi = DenseMatrix::from_fn(n, k, |i, c| {
        let pos = order.iter().position(|&o| o == i).unwrap();
        if pos < k {
            f64::from(u8::from(pos == c))
        } else {
            mixed.get(pos - k, c)
        }
    });
    let b = loop {
        let b = DenseMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        if linalg::condition_number(&b) < 50.0 {
            break b;
        }
    };
    let u = pi.matmul(&b).unwrap();
    let found: BTreeSet<usize> = spa(&u, &BTreeSet::new(), k).unwrap().indices.into_iter().collect();
    let pure: BTreeSet<usize> = order[..k].iter().copied().collect();
    prop_assert_eq!(found, pure);
    Ok(())
}

pub fn align_params() -> impl Strategy<Value = (u64, usize, Vec<usize>)> {
    (2usize..=5).prop_flat_map(|k| (any::<u64>(), Just(k), Just((0..k).collect::<Vec<_>>()).prop_shuffle()))
}

pub fn alignment_permutation_invariance(seed: u64, k: usize, perm: Vec<usize>) -> Result<(), TestCaseError> {
    let mut rng = rng_for(seed, 2);
    let alpha = vec![1.0; k];
    let p = sample_dirichlet(&alpha, 25, &mut rng).unwrap();
    let ph = sample_dirichlet(&alpha, 25, &mut rng).unwrap();
    let t = DenseMatrix::from_fn(10, k, |_, _| rng.random_range(0.0..1.0));
    let th = DenseMatrix::from_fn(10, k, |_, _| rng.random_range(0.0..1.0));
    let truth = (MembershipMatrix::new(p).unwrap(), ItemParamMatrix::new(t).unwrap());
    let base = align(
        &MembershipMatrix::new(ph.clone()).unwrap(),
        &ItemParamMatrix::new(th.clone()).unwrap(),
        &truth.0,
        &truth.1,
    )
    .unwrap();
    let shuffled = align(
        &MembershipMatrix::new(ph.select_columns(&perm)).unwrap(),
        &ItemParamMatrix::new(th.select_columns(&perm)).unwrap(),
        &truth.0,
        &truth.1,
    )
    .unwrap();
    let total = |a: &gom_core::evaluation::AlignedComparison| a.mae_pi + a.mae_theta;
    prop_assert!((total(&base) - total(&shuffled)).abs() < 1e-12);
    Ok(())
}
