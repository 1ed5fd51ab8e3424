use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gom_core::estimator::{self, FitResult};
use gom_core::evaluation::{self, best_k, k_sweep, reconstruction_error};
use gom_core::identifiability::{self, construct_alternative_for_profile};
use gom_core::io::{self, CsvMatrixFile, RunManifest, ValueDomain};
use gom_core::linalg::DenseMatrix;
use gom_core::simulation::{self, SimConfig};
use gom_core::vertex_hunting::PruneConfig;
use gom_core::{FitConfig, ItemParamMatrix, MembershipMatrix, ResponseMatrix};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use crate::error::CliError;
use crate::{CsvArgs, EstimatorArgs};

type CmdResult = Result<(), CliError>;

fn out_dir(out: &Path) -> CmdResult {
    fs::create_dir_all(out).map_err(|e| CliError::input(format!("{}: {e}", out.display())))
}

fn read(path: &Path, domain: ValueDomain, csv: &CsvArgs) -> Result<DenseMatrix, CliError> {
    if !csv.delimiter.is_ascii() {
        return Err(CliError::input(format!("delimiter {:?} is not ASCII", csv.delimiter)));
    }
    Ok(CsvMatrixFile::new(path, domain)
        .with_header(csv.header)
        .with_delimiter(csv.delimiter as u8)
        .read()?)
}

fn fit_config(k: usize, seed: u64, est: &EstimatorArgs) -> FitConfig {
    let mut cfg = FitConfig::new(k).with_epsilon(est.epsilon);
    cfg.prune = PruneConfig { r: est.prune_r, q: est.prune_q, e: est.prune_e };
    cfg.prune_enabled = !est.no_prune;
    cfg.svd.seed = seed;
    cfg
}

/// Small inputs cannot supply the default neighbour count.
fn cap_neighbors(cfg: &mut FitConfig, n: usize) {
    if cfg.prune_enabled && n >= 2 && cfg.prune.r > n - 1 {
        warn!("--prune-r {} exceeds N - 1 = {}; using {}", cfg.prune.r, n - 1, n - 1);
        cfg.prune.r = n - 1;
    }
}

fn one_based(indices: impl IntoIterator<Item = usize>) -> Vec<usize> {
    indices.into_iter().map(|i| i + 1).collect()
}

#[derive(Serialize)]
struct NeighborDistance {
    index: usize,
    distance: f64,
}

fn fit_report(res: &FitResult, manifest: &RunManifest) -> serde_json::Value {
    let pr = &res.prune_report;
    let d = &res.diagnostics;
    json!({
        "s_hat": one_based(res.s_hat.indices.iter().copied()),
        "singular_values": res.svd.sigma,
        "prune_report": {
            "pruned_indices": one_based(pr.pruned_indices.iter().copied()),
            "candidate_indices": one_based(pr.candidate_indices.iter().copied()),
            "row_norms": pr.row_norms,
            "avg_neighbor_dist": pr.avg_neighbor_dist.iter()
                .map(|(&i, &distance)| NeighborDistance { index: i + 1, distance })
                .collect::<Vec<_>>(),
        },
        "diagnostics": {
            "sigma_k": d.sigma_k,
            "sigma_k_plus_one": d.sigma_k_plus_one,
            "singular_gap_ratio": d.singular_gap_ratio,
            "pi_clamped_entries": d.pi_clamped_entries,
            "pi_degenerate_rows": one_based(d.pi_degenerate_rows.iter().copied()),
            "theta_clamped_low": d.theta_clamped_low,
            "theta_clamped_high": d.theta_clamped_high,
            "vertex_condition": d.vertex_condition,
            "membership_gram_condition": d.membership_gram_condition,
        },
        "manifest": manifest,
    })
}

fn to_json<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("plain data serializes")
}

pub fn fit(
    input: &Path,
    k: usize,
    expect_probabilities: bool,
    seed: u64,
    est: &EstimatorArgs,
    csv: &CsvArgs,
    out: &Path,
) -> CmdResult {
    let mut cfg = fit_config(k, seed, est);
    let domain = if expect_probabilities { ValueDomain::UnitInterval } else { ValueDomain::Binary };
    let data = read(input, domain, csv)?;
    info!("read {} x {} matrix from {}", data.rows(), data.cols(), input.display());
    cap_neighbors(&mut cfg, data.rows());
    let mut manifest = RunManifest::start(
        "fit",
        json!({ "fit": to_json(&cfg), "expect_probabilities": expect_probabilities, "header": csv.header,
                "delimiter": csv.delimiter.to_string() }),
        Some(seed),
    );
    manifest.add_input(input)?;

    let res = if expect_probabilities {
        estimator::fit_matrix(&data, &cfg)?
    } else {
        estimator::fit(&ResponseMatrix::new(data)?, &cfg)?
    };
    out_dir(out)?;
    io::write_matrix(&out.join("pi_hat.csv"), res.pi_hat.matrix())?;
    io::write_matrix(&out.join("theta_hat.csv"), res.theta_hat.matrix())?;
    let manifest = manifest.finish();
    io::write_json(&out.join("fit.json"), &fit_report(&res, &manifest))?;
    io::write_json(&out.join("manifest.json"), &manifest)?;
    Ok(())
}

pub fn simulate(
    n: usize,
    j: Option<usize>,
    k: usize,
    seed: u64,
    stream: u64,
    case: Option<u8>,
    out: &Path,
) -> CmdResult {
    let j = j.unwrap_or(n / 5);
    let cfg = match case {
        Some(c) => SimConfig::identifiability_case(c, n, j, seed)?,
        None => SimConfig::standard(n, j, k, seed),
    }
    .with_stream(stream);
    let data = simulation::generate(&cfg)?;
    out_dir(out)?;
    io::write_matrix(&out.join("pi_true.csv"), data.pi_true.matrix())?;
    io::write_matrix(&out.join("theta_true.csv"), data.theta_true.matrix())?;
    io::write_matrix(&out.join("R0.csv"), &data.r0)?;
    io::write_matrix(&out.join("R.csv"), data.r.matrix())?;
    let manifest = RunManifest::start("simulate", to_json(&cfg), Some(seed)).finish();
    io::write_json(&out.join("manifest.json"), &manifest)?;
    Ok(())
}

pub struct EvaluateInputs {
    pub pi_hat: PathBuf,
    pub theta_hat: PathBuf,
    pub pi_true: PathBuf,
    pub theta_true: PathBuf,
    pub responses: Option<PathBuf>,
}

fn membership(path: &Path, csv: &CsvArgs) -> Result<MembershipMatrix, CliError> {
    // written files carry round-off in their row sums
    Ok(MembershipMatrix::with_tolerance(read(path, ValueDomain::UnitInterval, csv)?, 1e-9)?)
}

fn item_params(path: &Path, csv: &CsvArgs) -> Result<ItemParamMatrix, CliError> {
    Ok(ItemParamMatrix::new(read(path, ValueDomain::UnitInterval, csv)?)?)
}

pub fn evaluate(inputs: &EvaluateInputs, csv: &CsvArgs, out: &Path) -> CmdResult {
    let pi_hat = membership(&inputs.pi_hat, csv)?;
    let theta_hat = item_params(&inputs.theta_hat, csv)?;
    let pi_true = membership(&inputs.pi_true, csv)?;
    let theta_true = item_params(&inputs.theta_true, csv)?;
    let cmp = evaluation::align(&pi_hat, &theta_hat, &pi_true, &theta_true)?;
    let recon = match &inputs.responses {
        Some(path) => {
            let r = ResponseMatrix::new(read(path, ValueDomain::Binary, csv)?)?;
            Some(reconstruction_error(&pi_hat, &theta_hat, &r)?)
        }
        None => None,
    };

    let mut manifest = RunManifest::start("evaluate", json!({ "header": csv.header }), None);
    for p in [&inputs.pi_hat, &inputs.theta_hat, &inputs.pi_true, &inputs.theta_true] {
        manifest.add_input(p)?;
    }
    if let Some(p) = &inputs.responses {
        manifest.add_input(p)?;
    }
    out_dir(out)?;
    io::write_json(
        &out.join("eval.json"),
        &json!({
            "permutation": one_based(cmp.permutation.iter().copied()),
            "greedy_alignment": cmp.greedy,
            "mae_pi": cmp.mae_pi,
            "mae_theta": cmp.mae_theta,
            "reconstruction_error": recon,
            "manifest": manifest.finish(),
        }),
    )?;
    Ok(())
}

pub struct DiagnoseInputs {
    pub theta: PathBuf,
    pub pi: Option<PathBuf>,
    pub k: usize,
    pub tol: f64,
    pub pure_tol: f64,
    pub construct_alternative: Option<f64>,
    pub profile: usize,
}

pub fn diagnose(inputs: &DiagnoseInputs, csv: &CsvArgs, out: &Path) -> CmdResult {
    let theta = item_params(&inputs.theta, csv)?;
    let pi = inputs.pi.as_deref().map(|p| membership(p, csv)).transpose()?;
    if theta.n_profiles() != inputs.k {
        return Err(CliError::input(format!(
            "Theta has {} columns but K = {}",
            theta.n_profiles(),
            inputs.k
        )));
    }
    if let Some(p) = &pi {
        if p.n_profiles() != inputs.k {
            return Err(CliError::input(format!("Pi has {} columns but K = {}", p.n_profiles(), inputs.k)));
        }
    }
    let verdict = identifiability::verdict(&theta, pi.as_ref(), inputs.k, inputs.tol, inputs.pure_tol);
    let conditions = pi.as_ref().map(|p| identifiability::condition_diagnostics(p, &theta));

    let mut manifest = RunManifest::start(
        "diagnose",
        json!({ "k": inputs.k, "tol": inputs.tol, "pure_tol": inputs.pure_tol,
                "construct_alternative": inputs.construct_alternative, "profile": inputs.profile,
                "header": csv.header }),
        None,
    );
    manifest.add_input(&inputs.theta)?;
    if let Some(p) = &inputs.pi {
        manifest.add_input(p)?;
    }

    let alternative = match inputs.construct_alternative {
        None => None,
        Some(eps) => {
            let pi = pi.as_ref().ok_or_else(|| CliError::input("--construct-alternative needs --pi"))?;
            if inputs.profile == 0 || inputs.profile > inputs.k {
                return Err(CliError::input(format!("--profile must be in 1..={}", inputs.k)));
            }
            let alt = construct_alternative_for_profile(pi, &theta, inputs.profile - 1, eps)?;
            // the product identity is checked here, before anything is written
            if alt.product_deviation >= 1e-10 {
                return Err(CliError {
                    code: crate::error::EXIT_NUMERIC,
                    message: format!("alternative changes the product by {:e}", alt.product_deviation),
                });
            }
            Some((eps, alt))
        }
    };

    out_dir(out)?;
    let alt_json = match &alternative {
        Some((eps, alt)) => {
            io::write_matrix(&out.join("alt_pi.csv"), alt.pi.matrix())?;
            io::write_matrix(&out.join("alt_theta.csv"), alt.theta.matrix())?;
            io::write_matrix(&out.join("mixing.csv"), &alt.mixing)?;
            json!({ "eps": eps, "profile": inputs.profile, "product_deviation": alt.product_deviation,
                    "files": ["alt_pi.csv", "alt_theta.csv", "mixing.csv"] })
        }
        None => serde_json::Value::Null,
    };
    let pure: Vec<Option<usize>> = verdict.pure_subject_indices.iter().map(|o| o.map(|i| i + 1)).collect();
    io::write_json(
        &out.join("verdict.json"),
        &json!({
            "case": verdict.case,
            "rank_theta": verdict.rank_theta,
            "affine_flags": verdict.affine_flags,
            "pure_subject_indices": pure,
            "pure_subject_condition": verdict.pure_subject_condition,
            "completely_mixed_subject": verdict.completely_mixed_subject.map(|i| i + 1),
            "conditions": conditions,
            "alternative": alt_json,
            "manifest": manifest.finish(),
        }),
    )?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn bench(
    ns: &[usize],
    j: Option<usize>,
    ks: &[usize],
    reps: usize,
    seed: u64,
    parallel: bool,
    est: &EstimatorArgs,
    out: &Path,
) -> CmdResult {
    if reps == 0 {
        return Err(CliError::input("--reps must be at least 1"));
    }
    let base = fit_config(ks.first().copied().unwrap_or(3), seed, est);
    let grid: Vec<SimConfig> = ks
        .iter()
        .flat_map(|&k| ns.iter().map(move |&n| SimConfig::standard(n, j.unwrap_or(n / 5), k, seed)))
        .collect();
    for cell in &grid {
        cell.validate()?;
    }
    let mut table = String::from(
        "N,J,K,reps,failures,time_median,time_q25,time_q75,time_mean,mae_theta_mean,mae_pi_mean\n",
    );
    for cell in &grid {
        info!("bench cell N={} J={} K={}", cell.n, cell.j, cell.k);
        let cfg = FitConfig { k: cell.k, ..base.clone() };
        let s = evaluation::run_replications(cell, &cfg, reps, parallel)?;
        let t = &s.seconds;
        writeln!(
            table,
            "{},{},{},{},{},{},{},{},{},{},{}",
            cell.n,
            cell.j,
            cell.k,
            reps,
            s.failures,
            t.quartiles.median,
            t.quartiles.q25,
            t.quartiles.q75,
            t.mean,
            s.mae_theta.mean,
            s.mae_pi.mean
        )
        .expect("writing to a String");
    }
    out_dir(out)?;
    io::write_text(&out.join("bench.csv"), &table)?;
    let manifest = RunManifest::start(
        "bench",
        json!({ "N": ns, "J": j, "K": ks, "reps": reps, "parallel": parallel, "fit": to_json(&base) }),
        Some(seed),
    )
    .finish();
    io::write_json(&out.join("manifest.json"), &manifest)?;
    Ok(())
}

pub fn ksweep(input: &Path, ks: &[usize], seed: u64, est: &EstimatorArgs, csv: &CsvArgs, out: &Path) -> CmdResult {
    let mut base = fit_config(ks.first().copied().unwrap_or(1), seed, est);
    base.validate()?;
    let r = ResponseMatrix::new(read(input, ValueDomain::Binary, csv)?)?;
    cap_neighbors(&mut base, r.matrix().rows());
    let entries = k_sweep(&r, &base, ks);
    let mut manifest = RunManifest::start("ksweep", json!({ "K": ks, "fit": to_json(&base) }), Some(seed));
    manifest.add_input(input)?;
    out_dir(out)?;
    io::write_json(
        &out.join("ksweep.json"),
        &json!({ "entries": entries, "best_k": best_k(&entries), "manifest": manifest.finish() }),
    )?;
    Ok(())
}
