//! Synthetic GoM data.
//!
//! Memberships are Dirichlet draws (normalized Gamma variates), item
//! parameters come from one of several sources, and responses are independent
//! Bernoulli draws from `ΠΘᵀ`. Every generator is driven by a ChaCha20 stream
//! so that a `(seed, stream)` pair fully determines the output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{self, ItemParamMatrix, MembershipMatrix, ResponseMatrix};
use crate::identifiability::examples;
use crate::linalg::DenseMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("entry ({row}, {col}) = {value} is not a probability")]
    Domain { row: usize, col: usize, value: f64 },
}

/// Seeded generator for replication `stream` of a run.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaSource {
    /// iid Uniform[0, 1].
    UniformIid,
    Explicit(DenseMatrix),
    /// Copies of the full-rank 4×3 worked example stacked vertically.
    Case1Tile,
    /// Copies of the rank-2 identifiable 4×3 worked example stacked vertically.
    Case2Tile,
    /// Every row equal to (0.8, 0.5, 0.2).
    Case3Rank1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiSource {
    /// Dirichlet rows with the first K rows overwritten by `I_K`.
    DirichletWithPureBlock,
    /// Dirichlet rows floored at `min` and renormalized.
    TruncatedDirichletMin(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub j: usize,
    pub k: usize,
    pub alpha: Vec<f64>,
    pub theta_source: ThetaSource,
    pub pi_source: PiSource,
    pub seed: u64,
    /// Stream index within `seed`; replications use their index here.
    #[serde(default)]
    pub stream: u64,
}

impl SimConfig {
    /// Dirichlet(1) memberships with a pure block and uniform item parameters.
    pub fn standard(n: usize, j: usize, k: usize, seed: u64) -> Self {
        Self {
            n,
            j,
            k,
            alpha: vec![1.0; k],
            theta_source: ThetaSource::UniformIid,
            pi_source: PiSource::DirichletWithPureBlock,
            seed,
            stream: 0,
        }
    }

    /// The three identifiability study settings (K = 3):
    /// 1. tiled full-rank Θ with a pure block,
    /// 2. the same Θ with memberships floored at 1/3 (no pure subjects),
    /// 3. rank-one Θ with a pure block.
    pub fn identifiability_case(case: u8, n: usize, j: usize, seed: u64) -> Result<Self, SimulationError> {
        let mut cfg = Self::standard(n, j, 3, seed);
        match case {
            1 => cfg.theta_source = ThetaSource::Case1Tile,
            2 => {
                cfg.theta_source = ThetaSource::Case1Tile;
                cfg.pi_source = PiSource::TruncatedDirichletMin(1.0 / 3.0);
            }
            3 => cfg.theta_source = ThetaSource::Case3Rank1,
            other => {
                return Err(SimulationError::Config(format!(
                    "unknown identifiability case {other}; expected 1, 2 or 3"
                )))
            }
        }
        Ok(cfg)
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        if self.k == 0 {
            return Err(SimulationError::Config("K must be at least 1".into()));
        }
        if self.alpha.len() != self.k {
            return Err(SimulationError::Config(format!(
                "alpha has {} entries for K = {}",
                self.alpha.len(),
                self.k
            )));
        }
        if let Some(a) = self.alpha.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(SimulationError::Parameter(format!("alpha entry {a} is not positive")));
        }
        if self.n < self.k {
            return Err(SimulationError::Config(format!(
                "N = {} is smaller than K = {}",
                self.n, self.k
            )));
        }
        if self.j == 0 {
            return Err(SimulationError::Config("J must be at least 1".into()));
        }
        match &self.theta_source {
            ThetaSource::Case1Tile | ThetaSource::Case2Tile => {
                if self.k != 3 || !self.j.is_multiple_of(4) {
                    return Err(SimulationError::Config(format!(
                        "tiled item parameters need K = 3 and J divisible by 4 (got K = {}, J = {})",
                        self.k, self.j
                    )));
                }
            }
            ThetaSource::Case3Rank1 if self.k != 3 => {
                return Err(SimulationError::Config("rank-one item parameters need K = 3".into()));
            }
            ThetaSource::Explicit(m) if m.shape() != (self.j, self.k) => {
                return Err(SimulationError::Config(format!(
                    "explicit item parameters are {:?}, expected ({}, {})",
                    m.shape(),
                    self.j,
                    self.k
                )));
            }
            _ => {}
        }
        if let PiSource::TruncatedDirichletMin(m) = self.pi_source {
            if !(0.0..1.0).contains(&m) {
                return Err(SimulationError::Config(format!("membership floor {m} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    pub pi_true: MembershipMatrix,
    pub theta_true: ItemParamMatrix,
    pub r0: DenseMatrix,
    pub r: ResponseMatrix,
}

/// `n` independent Dirichlet(`alpha`) rows.
pub fn sample_dirichlet<R: Rng + ?Sized>(
    alpha: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<DenseMatrix, SimulationError> {
    let gammas = alpha
        .iter()
        .map(|&a| {
            Gamma::new(a, 1.0).map_err(|_| SimulationError::Parameter(format!("alpha entry {a} is not positive")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let k = alpha.len();
    let mut data = Vec::with_capacity(n * k);
    for _ in 0..n {
        let start = data.len();
        loop {
            data.truncate(start);
            data.extend(gammas.iter().map(|g| g.sample(rng)));
            let sum: f64 = data[start..].iter().sum();
            // all-zero draws only happen for tiny alpha; redraw
            if sum > 0.0 {
                data[start..].iter_mut().for_each(|v| *v /= sum);
                break;
            }
        }
    }
    Ok(DenseMatrix::new(n, k, data).expect("finite draws"))
}

/// Independent Bernoulli draws with success probabilities `r0`.
pub fn bernoulli_sample<R: Rng + ?Sized>(
    r0: &DenseMatrix,
    rng: &mut R,
) -> Result<ResponseMatrix, SimulationError> {
    for i in 0..r0.rows() {
        if let Some((j, &v)) = r0.row(i).iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(SimulationError::Domain { row: i, col: j, value: v });
        }
    }
    let data: Vec<f64> = r0
        .as_slice()
        .iter()
        .map(|&p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
        .collect();
    let m = DenseMatrix::new(r0.rows(), r0.cols(), data).expect("binary draws");
    Ok(ResponseMatrix::new(m).expect("binary draws"))
}

/// Floors each entry of a probability row at `min` and renormalizes.
pub fn floor_and_renormalize(row: &mut [f64], min: f64) {
    row.iter_mut().for_each(|v| *v = v.max(min));
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= sum);
}

fn tile(block: &DenseMatrix, j: usize) -> DenseMatrix {
    DenseMatrix::from_fn(j, block.cols(), |r, c| block.get(r % block.rows(), c))
}

pub fn generate(cfg: &SimConfig) -> Result<SimOutput, SimulationError> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, cfg.stream);
    let k = cfg.k;

    let mut pi = sample_dirichlet(&cfg.alpha, cfg.n, &mut rng)?.into_vec();
    match cfg.pi_source {
        PiSource::DirichletWithPureBlock => {
            for i in 0..k {
                for c in 0..k {
                    pi[i * k + c] = if i == c { 1.0 } else { 0.0 };
                }
            }
        }
        PiSource::TruncatedDirichletMin(min) => {
            pi.chunks_mut(k).for_each(|row| floor_and_renormalize(row, min));
        }
    }
    let pi = DenseMatrix::new(cfg.n, k, pi).expect("finite memberships");

    let theta = match &cfg.theta_source {
        ThetaSource::UniformIid => DenseMatrix::from_fn(cfg.j, k, |_, _| rng.random::<f64>()),
        ThetaSource::Explicit(m) => m.clone(),
        ThetaSource::Case1Tile => tile(&examples::example_one(), cfg.j),
        ThetaSource::Case2Tile => tile(&examples::example_two(), cfg.j),
        ThetaSource::Case3Rank1 => DenseMatrix::from_fn(cfg.j, 3, |_, c| [0.8, 0.5, 0.2][c]),
    };
    let theta_true = ItemParamMatrix::new(theta)
        .map_err(|e| SimulationError::Config(format!("item parameters: {e}")))?;
    let pi_true = MembershipMatrix::new(pi)
        .map_err(|e| SimulationError::Config(format!("memberships: {e}")))?;

    let r0 = estimator::reconstruct(&pi_true, &theta_true).expect("conforming factors");
    // rounding in the product can push a convex combination a hair past [0, 1]
    let r0 = DenseMatrix::from_fn(r0.rows(), r0.cols(), |i, j| r0.get(i, j).clamp(0.0, 1.0));
    let r = bernoulli_sample(&r0, &mut rng)?;
    Ok(SimOutput {
        pi_true,
        theta_true,
        r0,
        r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identifiability::find_pure_subjects;
    use crate::linalg::numerical_rank;

    #[test]
    fn dirichlet_k1_is_all_ones() {
        let m = sample_dirichlet(&[2.5], 20, &mut rng_for(1, 0)).unwrap();
        assert!(m.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn dirichlet_rows_are_simplex_points() {
        let m = sample_dirichlet(&[0.3, 1.0, 4.0], 500, &mut rng_for(2, 0)).unwrap();
        for row in m.row_iter() {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dirichlet_rejects_bad_alpha() {
        assert!(sample_dirichlet(&[1.0, 0.0], 3, &mut rng_for(0, 0)).is_err());
        assert!(sample_dirichlet(&[1.0, -2.0], 3, &mut rng_for(0, 0)).is_err());
    }

    #[test]
    fn bernoulli_degenerate_probabilities() {
        let zeros = DenseMatrix::zeros(4, 5);
        let r = bernoulli_sample(&zeros, &mut rng_for(3, 0)).unwrap();
        assert!(r.matrix().as_slice().iter().all(|&v| v == 0.0));
        let ones = DenseMatrix::from_fn(4, 5, |_, _| 1.0);
        let r = bernoulli_sample(&ones, &mut rng_for(3, 0)).unwrap();
        assert!(r.matrix().as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn bernoulli_rejects_out_of_range() {
        let bad = DenseMatrix::from_rows(&[[0.5, 1.5]]).unwrap();
        assert!(matches!(
            bernoulli_sample(&bad, &mut rng_for(0, 0)),
            Err(SimulationError::Domain { row: 0, col: 1, .. })
        ));
    }

    #[test]
    fn floor_minimum_is_one_fifth() {
        // raw (1, 0, 0) → (1, 1/3, 1/3) / (5/3)
        let mut row = [1.0, 0.0, 0.0];
        floor_and_renormalize(&mut row, 1.0 / 3.0);
        assert!((row[0] - 0.6).abs() < 1e-15);
        assert!((row[1] - 0.2).abs() < 1e-15 && (row[2] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn pure_block_is_injected() {
        let out = generate(&SimConfig::standard(50, 10, 4, 9)).unwrap();
        assert_eq!(
            find_pure_subjects(&out.pi_true, 0.0),
            vec![Some(0), Some(1), Some(2), Some(3)]
        );
        assert_eq!(out.r.matrix().shape(), (50, 10));
    }

    #[test]
    fn truncated_memberships_have_no_pure_subjects() {
        let cfg = SimConfig::identifiability_case(2, 1000, 200, 4).unwrap();
        let out = generate(&cfg).unwrap();
        let min = out.pi_true.matrix().min_value();
        assert!(min >= 0.2 - 1e-15, "{min}");
        // the infimum 0.2 is approached by rows whose raw draw is near a vertex
        assert!(min < 0.21, "{min}");
        assert_eq!(find_pure_subjects(&out.pi_true, 0.05), vec![None, None, None]);
    }

    #[test]
    fn case_thetas_have_expected_rank() {
        let rank = |case: ThetaSource| {
            let mut cfg = SimConfig::standard(20, 16, 3, 1);
            cfg.theta_source = case;
            numerical_rank(generate(&cfg).unwrap().theta_true.matrix(), 1e-8)
        };
        assert_eq!(rank(ThetaSource::Case1Tile), 3);
        assert_eq!(rank(ThetaSource::Case2Tile), 2);
        assert_eq!(rank(ThetaSource::Case3Rank1), 1);
    }

    #[test]
    fn config_errors() {
        let mut cfg = SimConfig::standard(20, 10, 3, 1);
        cfg.theta_source = ThetaSource::Case1Tile;
        assert!(matches!(generate(&cfg), Err(SimulationError::Config(_))));
        let mut cfg = SimConfig::standard(2, 10, 3, 1);
        assert!(generate(&cfg).is_err());
        cfg.n = 20;
        cfg.alpha = vec![1.0, 1.0];
        assert!(generate(&cfg).is_err());
        assert!(SimConfig::identifiability_case(4, 10, 8, 0).is_err());
    }

    #[test]
    fn reproducible_and_stream_separated() {
        let cfg = SimConfig::standard(40, 12, 3, 17);
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = generate(&cfg.clone().with_stream(1)).unwrap();
        assert_ne!(generate(&cfg).unwrap().r, other.r);
    }

    #[test]
    fn r0_is_the_product() {
        let out = generate(&SimConfig::standard(30, 8, 3, 5)).unwrap();
        let prod = estimator::reconstruct(&out.pi_true, &out.theta_true).unwrap();
        assert!(prod.max_abs_diff(&out.r0) == 0.0);
    }
}
