//! `rare-indep`: rescaled and boosted independence tests from the command line.
//!
//! Exit codes: 0 success, 2 invalid request or input, 3 degenerate data.

mod commands;
mod error;
mod ingest;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;
use crate::output::Format;

#[derive(Parser)]
#[command(name = "rare-indep", version, about = "Rescaled and boosted independence tests for rare-event labels")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Clone)]
pub struct Global {
    /// Master seed for subsampling, projections, permutations and simulation.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "RARE_SIG_THREADS")]
    pub threads: Option<usize>,
    /// Write results here instead of stdout.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Output format; scalar commands print a bare number when omitted.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Subcommand)]
pub enum Command {
    /// Test independence between the features and the class label of a CSV file.
    Test(TestArgs),
    /// Draw the Bernoulli thinning of the controls used by the boosted test.
    SubsamplePlan(PlanArgs),
    /// Choose the subsampling ratio s.
    #[command(subcommand)]
    SelectS(SelectRule),
    /// Theoretical power and local-alternative thresholds.
    #[command(subcommand)]
    Power(PowerKind),
    /// Monte Carlo size and power of a test on a simulated scenario.
    Simulate(SimulateArgs),
    /// Runtime scaling of the statistic engines.
    Bench(BenchArgs),
    /// Summarize an input file after missing-value deletion.
    Describe(DescribeArgs),
}

#[derive(Args, Clone)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Name of the integer label column (0 = control).
    #[arg(long, default_value = "y")]
    pub label: String,
    /// Comma-separated feature columns (default: every other column).
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<String>,
    /// Center and scale each feature column.
    #[arg(long)]
    pub standardize: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Rit,
    Bit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InferenceArg {
    Auto,
    Asymptotic,
    Permutation,
    Highdim,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReferenceArg {
    Controls,
    Pooled,
}

#[derive(Args, Clone)]
pub struct KernelArgs {
    /// pearson, kendall, imbalanced_kendall, dcov, ipcov or multi_kendall.
    #[arg(long, default_value = "kendall")]
    pub kernel: String,
    /// Controls per tuple for imbalanced_kendall.
    #[arg(long)]
    pub m: Option<usize>,
    /// Bandwidth of the angular affinity for ipcov.
    #[arg(long)]
    pub c_sigma2: Option<f64>,
}

#[derive(Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long, value_enum, default_value = "rit")]
    pub method: MethodArg,
    /// Subsampling ratio for --method bit.
    #[arg(long)]
    pub s: Option<usize>,
    #[arg(long, value_enum, default_value = "auto")]
    pub inference: InferenceArg,
    /// Shorthand for --inference highdim.
    #[arg(long)]
    pub highdim: bool,
    /// Permutations for permutation inference.
    #[arg(short = 'B', long = "permutations", default_value_t = 999)]
    pub permutations: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Tuples per point in projection-variance estimates.
    #[arg(long, default_value_t = 200)]
    pub budget: usize,
    /// Rows centring the two-case projection of the high-dimensional test.
    #[arg(long, value_enum, default_value = "controls")]
    pub xi02_reference: ReferenceArg,
}

#[derive(Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub s: usize,
    /// Controls per kernel tuple; plans retaining fewer are redrawn.
    #[arg(long, default_value_t = 1)]
    pub m0: usize,
}

#[derive(Args, Clone, Copy)]
pub struct PowerInputArgs {
    #[arg(long)]
    pub n1: usize,
    #[arg(long, default_value_t = 1)]
    pub m0: usize,
    #[arg(long, default_value_t = 1)]
    pub m1: usize,
    #[arg(long)]
    pub xi01: f64,
    #[arg(long)]
    pub xi10: f64,
    #[arg(long)]
    pub mu0: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Subcommand)]
pub enum SelectRule {
    /// Smallest s keeping the extra variance within epsilon.
    Variance {
        #[arg(long)]
        n1: usize,
        #[arg(long)]
        epsilon: f64,
    },
    /// Smallest s whose boosted power reaches beta.
    PowerFloor {
        #[command(flatten)]
        inputs: PowerInputArgs,
        #[arg(long)]
        beta: f64,
    },
    /// Smallest s whose power is within epsilon of the full-sample test.
    PowerGap {
        #[command(flatten)]
        inputs: PowerInputArgs,
        #[arg(long)]
        epsilon: f64,
    },
}

#[derive(Subcommand)]
pub enum PowerKind {
    /// Power of a first-order test; pass --s and --xi10 for the boosted test.
    FirstOrder {
        #[arg(long)]
        mu0: f64,
        #[arg(long)]
        n1: usize,
        #[arg(long, default_value_t = 1)]
        m0: usize,
        #[arg(long, default_value_t = 1)]
        m1: usize,
        #[arg(long)]
        xi01: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, requires = "xi10")]
        s: Option<usize>,
        #[arg(long, requires = "s")]
        xi10: Option<f64>,
    },
    /// Power of the high-dimensional second-order test.
    Highdim {
        #[arg(long)]
        mu0: f64,
        #[arg(long)]
        n1: usize,
        #[arg(long, default_value_t = 2)]
        m1: usize,
        #[arg(long)]
        xi02: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Mixture-weight scale beyond which local power exceeds beta.
    LocalThreshold {
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        mu_g1: f64,
        #[arg(long)]
        xi: f64,
    },
}

#[derive(Args)]
pub struct SimulateArgs {
    /// A scenario family, a table preset (table3_pearson_eg1, table_d4_dcov_eg1, ...)
    /// or figure1 / figure1_fixed_share / figure1_fixed_cases.
    #[arg(long)]
    pub family: String,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub n1: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub effect: Option<f64>,
    /// Simulate the null version of the family.
    #[arg(long)]
    pub null: bool,
    #[arg(long)]
    pub mixture_shift: Option<f64>,
    /// Monte Carlo replications.
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Rescaled kernel to test with.
    #[arg(long, conflicts_with = "classical")]
    pub kernel: Option<String>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub c_sigma2: Option<f64>,
    /// Classical statistic to test with: pearson, kendall, dcov or ipcov.
    #[arg(long)]
    pub classical: Option<String>,
    /// Subsampling ratio for the boosted test.
    #[arg(long)]
    pub s: Option<usize>,
    #[arg(long, value_enum)]
    pub inference: Option<InferenceArg>,
    #[arg(short = 'B', long = "permutations")]
    pub permutations: Option<usize>,
    /// Use the sample sizes and replication counts of the original studies.
    #[arg(long)]
    pub full: bool,
}

#[derive(Args)]
pub struct BenchArgs {
    /// pearson_rit, kendall_rit, dcov_rit or dcov_bit.
    #[arg(long)]
    pub target: String,
    /// Sample sizes (or ratios s for dcov_bit).
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
}

#[derive(Args)]
pub struct DescribeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Also write the cleaned sample as CSV.
    #[arg(long)]
    pub write_clean: Option<PathBuf>,
}

fn configure_threads(threads: Option<usize>) -> Result<(), CliError> {
    match threads {
        Some(0) => Err(CliError::usage("--threads must be positive")),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::usage(format!("cannot configure threads: {e}"))),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads(cli.global.threads).and_then(|()| commands::run(&cli.global, cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
