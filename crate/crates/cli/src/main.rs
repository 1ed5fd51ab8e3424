mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "gom", version, about = "Spectral Grade-of-Membership estimation")]
struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CsvArgs {
    /// Skip one header line in every input CSV.
    #[arg(long)]
    pub header: bool,
    /// Field delimiter for input CSVs.
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
}

#[derive(Args, Debug, Clone)]
pub struct EstimatorArgs {
    /// Θ truncation level.
    #[arg(long, default_value_t = 0.001)]
    pub epsilon: f64,
    /// Nearest neighbours used when pruning.
    #[arg(long = "prune-r", default_value_t = 10)]
    pub prune_r: usize,
    /// Upper quantile of row norms considered for pruning.
    #[arg(long = "prune-q", default_value_t = 0.4)]
    pub prune_q: f64,
    /// Upper quantile of neighbour distances pruned among the candidates.
    #[arg(long = "prune-e", default_value_t = 0.2)]
    pub prune_e: f64,
    /// Skip pruning entirely.
    #[arg(long = "no-prune")]
    pub no_prune: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate Π and Θ from a response matrix.
    Fit {
        input: PathBuf,
        #[arg(long = "K")]
        k: usize,
        /// Accept probabilities in [0, 1] instead of binary responses.
        #[arg(long = "expect-probabilities")]
        expect_probabilities: bool,
        /// Seed for the randomized SVD backend.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        est: EstimatorArgs,
        #[command(flatten)]
        csv: CsvArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic data.
    Simulate {
        #[arg(long = "N")]
        n: usize,
        #[arg(long = "J")]
        j: Option<usize>,
        #[arg(long = "K", default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Replication stream within the seed.
        #[arg(long, default_value_t = 0)]
        stream: u64,
        /// Identifiability study setting (1, 2 or 3; forces K = 3).
        #[arg(long)]
        case: Option<u8>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare estimated factors with the truth.
    Evaluate {
        #[arg(long = "pi-hat")]
        pi_hat: PathBuf,
        #[arg(long = "theta-hat")]
        theta_hat: PathBuf,
        #[arg(long = "pi-true")]
        pi_true: PathBuf,
        #[arg(long = "theta-true")]
        theta_true: PathBuf,
        /// Response matrix, for the reconstruction error.
        #[arg(long)]
        responses: Option<PathBuf>,
        #[command(flatten)]
        csv: CsvArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Identifiability classification and conditioning checks.
    Diagnose {
        #[arg(long)]
        theta: PathBuf,
        #[arg(long)]
        pi: Option<PathBuf>,
        #[arg(long = "K")]
        k: usize,
        /// Relative singular value cutoff for rank decisions.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// A subject is pure for a profile when its membership is at least 1 - pure-tol.
        #[arg(long = "pure-tol", default_value_t = 1e-8)]
        pure_tol: f64,
        /// Build an observationally equivalent alternative with this epsilon (needs --pi).
        #[arg(long = "construct-alternative")]
        construct_alternative: Option<f64>,
        /// Profile without a pure subject used for the alternative (1-based).
        #[arg(long, default_value_t = 1)]
        profile: usize,
        #[command(flatten)]
        csv: CsvArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Timing and accuracy over a simulation grid.
    Bench {
        #[arg(long = "N", value_delimiter = ',', required = true)]
        n: Vec<usize>,
        /// Items per cell; defaults to N/5.
        #[arg(long = "J")]
        j: Option<usize>,
        #[arg(long = "K", value_delimiter = ',', default_value = "3")]
        k: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run replications concurrently (timings then include contention).
        #[arg(long)]
        parallel: bool,
        #[command(flatten)]
        est: EstimatorArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruction error over candidate numbers of profiles.
    Ksweep {
        input: PathBuf,
        #[arg(long = "K", value_delimiter = ',', required = true)]
        k: Vec<usize>,
        /// Seed for the randomized SVD backend.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        est: EstimatorArgs,
        #[command(flatten)]
        csv: CsvArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Fit { input, k, expect_probabilities, seed, est, csv, out } => {
            commands::fit(&input, k, expect_probabilities, seed, &est, &csv, &out)
        }
        Command::Simulate { n, j, k, seed, stream, case, out } => {
            commands::simulate(n, j, k, seed, stream, case, &out)
        }
        Command::Evaluate { pi_hat, theta_hat, pi_true, theta_true, responses, csv, out } => commands::evaluate(
            &commands::EvaluateInputs { pi_hat, theta_hat, pi_true, theta_true, responses },
            &csv,
            &out,
        ),
        Command::Diagnose { theta, pi, k, tol, pure_tol, construct_alternative, profile, csv, out } => {
            commands::diagnose(
                &commands::DiagnoseInputs { theta, pi, k, tol, pure_tol, construct_alternative, profile },
                &csv,
                &out,
            )
        }
        Command::Bench { n, j, k, reps, seed, parallel, est, out } => {
            commands::bench(&n, j, &k, reps, seed, parallel, &est, &out)
        }
        Command::Ksweep { input, k, seed, est, csv, out } => commands::ksweep(&input, &k, seed, &est, &csv, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
