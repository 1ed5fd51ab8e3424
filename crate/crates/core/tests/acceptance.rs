//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fail.

mod common;

use std::time::{Duration, Instant};

use gom_core::estimator::fit_matrix;
use gom_core::evaluation::{align, best_k, k_sweep, run_replications, ReplicationSummary};
use gom_core::identifiability::{self, classify_theta, construct_alternative, examples, IdentifiabilityCase};
use gom_core::linalg::{numerical_rank, DenseMatrix};
use gom_core::simulation::{generate, rng_for, sample_dirichlet, SimConfig};
use gom_core::{fit, FitConfig, ItemParamMatrix, MembershipMatrix};
use proptest::strategy::Strategy;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::Rng;

const SEED: u64 = 20240501;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn profiles_with_pure_rows(rng: &mut impl Rng, n: usize, k: usize) -> DenseMatrix {
    let mixed = sample_dirichlet(&vec![1.0; k], n - k, rng).unwrap();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut pi = DenseMatrix::zeros(n, k);
    for (pos, &row) in order.iter().enumerate() {
        for c in 0..k {
            let v = if pos < k { f64::from(u8::from(pos == c)) } else { mixed.get(pos - k, c) };
            pi.set(row, c, v);
        }
    }
    pi
}

fn exact_recovery() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for inst in 0..50u64 {
        let mut rng = rng_for(SEED, inst);
        let n = rng.random_range(50..=500);
        let j = rng.random_range(20..=200);
        let k = [2, 3, 5][inst as usize % 3];
        let pi = profiles_with_pure_rows(&mut rng, n, k);
        let theta = loop {
            let t = DenseMatrix::from_fn(j, k, |_, _| rng.random_range(0.0..1.0));
            if numerical_rank(&t, 1e-8) == k {
                break t;
            }
        };
        let r0 = pi.matmul(&theta.transpose()).unwrap();
        let cfg = FitConfig::new(k).without_pruning().with_epsilon(0.0);
        let res = match fit_matrix(&r0, &cfg) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("instance {inst} failed: {e}")),
        };
        let pi_t = MembershipMatrix::new(pi).unwrap();
        let theta_t = ItemParamMatrix::new(theta).unwrap();
        let cmp = align(&res.pi_hat, &res.theta_hat, &pi_t, &theta_t).unwrap();
        let dp = res.pi_hat.matrix().select_columns(&cmp.permutation).max_abs_diff(pi_t.matrix());
        let dt = res.theta_hat.matrix().select_columns(&cmp.permutation).max_abs_diff(theta_t.matrix());
        worst = worst.max(dp).max(dt);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-6 && secs < 30.0,
        format!("50 instances, max abs error {worst:.2e}, {secs:.1} s"),
    )
}

fn standard_cell(n: usize) -> ReplicationSummary {
    run_replications(&SimConfig::standard(n, n / 5, 3, SEED), &FitConfig::new(3), 100, true).unwrap()
}

fn table_two(cells: &[(usize, ReplicationSummary, Duration)]) -> Outcome {
    let targets = [(200, 0.12, 0.17, 0.03), (2000, 0.03, 0.06, 0.02)];
    let mut pass = true;
    let mut parts = Vec::new();
    for (n, theta_ref, pi_ref, tol) in targets {
        let (_, s, took) = cells.iter().find(|c| c.0 == n).unwrap();
        let ok = s.failures == 0
            && (s.mae_theta.mean - theta_ref).abs() <= tol
            && (s.mae_pi.mean - pi_ref).abs() <= tol;
        pass &= ok;
        parts.push(format!(
            "N={n}: theta {:.4} (ref {theta_ref}), pi {:.4} (ref {pi_ref}), tol {tol}, {} failures, {:.1} s",
            s.mae_theta.mean,
            s.mae_pi.mean,
            s.failures,
            took.as_secs_f64()
        ));
        if n == 2000 && took.as_secs_f64() > 900.0 {
            pass = false;
        }
    }
    outcome(pass, parts.join("; "))
}

fn consistency(cells: &[(usize, ReplicationSummary, Duration)]) -> Outcome {
    let theta: Vec<f64> = cells.iter().map(|c| c.1.mae_theta.mean).collect();
    let pi: Vec<f64> = cells.iter().map(|c| c.1.mae_pi.mean).collect();
    let decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    outcome(
        decreasing(&theta) && decreasing(&pi),
        format!("N=200/1000/2000 theta {theta:.4?}, pi {pi:.4?}"),
    )
}

fn identifiability_cases() -> Outcome {
    let summaries: Vec<ReplicationSummary> = (1..=3u8)
        .map(|c| {
            let sim = SimConfig::identifiability_case(c, 1000, 200, SEED).unwrap();
            run_replications(&sim, &FitConfig::new(3), 50, true).unwrap()
        })
        .collect();
    let base = &summaries[0];
    let mut pass = summaries.iter().all(|s| s.failures == 0);
    let mut parts = vec![format!("case 1 theta {:.4} pi {:.4}", base.mae_theta.mean, base.mae_pi.mean)];
    for (i, s) in summaries.iter().enumerate().skip(1) {
        let rt = s.mae_theta.mean / base.mae_theta.mean;
        let rp = s.mae_pi.mean / base.mae_pi.mean;
        pass &= rt >= 2.0 && rp >= 2.0;
        parts.push(format!("case {} ratios theta {rt:.2}x pi {rp:.2}x", i + 1));
    }
    outcome(pass, parts.join("; "))
}

fn classification() -> Outcome {
    let got: Vec<IdentifiabilityCase> = [examples::example_one(), examples::example_two(), examples::example_three()]
        .iter()
        .map(|t| classify_theta(&ItemParamMatrix::new(t.clone()).unwrap(), 3, identifiability::DEFAULT_TOLERANCE).case)
        .collect();
    let want = [
        IdentifiabilityCase::FullRankA,
        IdentifiabilityCase::RankDeficientIdentifiableB,
        IdentifiabilityCase::NotIdentifiableC,
    ];
    outcome(got == want, format!("{got:?}"))
}

fn is_permutation(m: &DenseMatrix) -> bool {
    m.as_slice().iter().all(|&v| v == 0.0 || v == 1.0)
        && (0..m.rows()).all(|i| m.row(i).iter().sum::<f64>() == 1.0)
        && (0..m.cols()).all(|c| m.column(c).iter().sum::<f64>() == 1.0)
}

fn alternatives() -> Outcome {
    let mut worst = 0.0f64;
    for inst in 0..20u64 {
        let mut rng = rng_for(SEED, 1000 + inst);
        let k = [2, 3, 4][inst as usize % 3];
        let n = rng.random_range(20..=80);
        let j = rng.random_range(10..=40);
        // delta is the gap between the largest profile-1 membership and 1
        let delta = rng.random_range(0.01..0.03);
        let raw = sample_dirichlet(&vec![1.0; k], n, &mut rng).unwrap();
        let floor = 1.0 / (k as f64 - 1.0);
        let pi = DenseMatrix::from_fn(n, k, |i, c| {
            if i == 0 {
                // attains max pi_i1 = 1 - delta
                return if c == 0 { 1.0 - delta } else { delta * floor };
            }
            let shift = if c == 0 { 0.0 } else { delta * floor };
            (1.0 - delta) * raw.get(i, c) + shift
        });
        let theta = DenseMatrix::from_fn(j, k, |_, _| rng.random_range(0.05..0.95));
        let max_first = (0..n).map(|i| pi.get(i, 0)).fold(0.0, f64::max);
        let d = 1.0 - max_first;
        let eps = d.min(floor) / 2.0;
        let pi_m = MembershipMatrix::with_tolerance(pi, 1e-12).unwrap();
        let theta_m = ItemParamMatrix::new(theta).unwrap();
        let alt = match construct_alternative(&pi_m, &theta_m, eps) {
            Ok(a) => a,
            Err(e) => return outcome(false, format!("instance {inst} (K={k}, eps={eps:.4}): {e}")),
        };
        if is_permutation(&alt.mixing) {
            return outcome(false, format!("instance {inst}: mixing matrix is a permutation"));
        }
        worst = worst.max(alt.product_deviation);
    }
    outcome(worst < 1e-10, format!("20 instances, K in {{2,3,4}}, max product deviation {worst:.2e}"))
}

fn run_property<S: Strategy>(
    name: &str,
    strategy: S,
    check: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<String, String> {
    let config = Config { cases: common::CASES, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner
        .run(&strategy, check)
        .map(|_| format!("{name} ok"))
        .map_err(|e| format!("{name}: {e}"))
}

fn property_suite() -> Outcome {
    use common::*;
    let results = [
        run_property("sign flips", (sim_params(), proptest::collection::vec(proptest::bool::ANY, 4)), |((s, n, k), f)| {
            sign_flip_invariance(s, n, k, f)
        }),
        run_property("domains", (sim_params(), 0.0f64..0.1), |((s, n, k), e)| output_domains(s, n, k, e)),
        run_property("prune bound", prune_params(), |(s, n, k, r, q, e)| prune_cardinality(s, n, k, r, q, e)),
        run_property("spa recovery", spa_params(), |(s, x, k)| spa_exact_recovery(s, x, k)),
        run_property("alignment", align_params(), |(s, k, p)| alignment_permutation_invariance(s, k, p)),
    ];
    let pass = results.iter().all(Result::is_ok);
    let text: Vec<String> = results.into_iter().map(|r| r.unwrap_or_else(|e| e)).collect();
    outcome(pass, format!("{} cases each: {}", common::CASES, text.join(", ")))
}

fn scale() -> Outcome {
    let data = generate(&SimConfig::standard(5000, 1000, 8, SEED)).unwrap();
    let start = Instant::now();
    let res = fit(&data.r, &FitConfig::new(8));
    let secs = start.elapsed().as_secs_f64();
    match res {
        Ok(_) => outcome(secs <= 120.0, format!("N=5000 J=1000 K=8 fit in {secs:.2} s")),
        Err(e) => outcome(false, format!("fit failed after {secs:.2} s: {e}")),
    }
}

fn k_selection() -> Outcome {
    let hits: usize = (0..50u64)
        .map(|rep| {
            let data = generate(&SimConfig::standard(2000, 400, 3, SEED).with_stream(rep)).unwrap();
            let sweep = k_sweep(&data.r, &FitConfig::new(3), &[2, 3, 4]);
            usize::from(best_k(&sweep) == Some(3))
        })
        .sum();
    outcome(hits * 100 >= 60 * 50, format!("K=3 selected in {hits}/50 replications"))
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {id}. {name}: {}", o.detail);
        failed += usize::from(!o.pass);
    };

    report(1, "exact recovery on noiseless data", exact_recovery());

    let cells: Vec<(usize, ReplicationSummary, Duration)> = [200, 1000, 2000]
        .into_iter()
        .map(|n| {
            let t = Instant::now();
            let s = standard_cell(n);
            (n, s, t.elapsed())
        })
        .collect();
    report(2, "simulation accuracy vs reference table", table_two(&cells));
    report(3, "error decreases with sample size", consistency(&cells));
    report(4, "identifiability cases", identifiability_cases());
    report(5, "worked example classification", classification());
    report(6, "alternative parameter construction", alternatives());
    report(7, "pipeline property suite", property_suite());
    report(8, "fit at N=5000, J=1000, K=8", scale());
    report(9, "K selection by reconstruction error", k_selection());

    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
