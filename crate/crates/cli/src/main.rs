//! `tghrf` command-line front end.

mod cmd;
mod config;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use config::{config_hash, merge_config_file, Provenance};

const DEFAULT_SEED: u64 = 20_180_701;

#[derive(Parser, Debug)]
#[command(name = "tghrf", version, about = "Tukey g-and-h random fields: simulation, estimation, S-BLUE, l-moments, clustering")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Random seed; `TGH_SEED` overrides the built-in default.
    #[arg(long, global = true, env = "TGH_SEED")]
    seed: Option<u64>,
    /// Plain `key=value` file of long options; flags on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate TGH random fields on a regular grid.
    Simulate(SimulateArgs),
    /// Regression S-BLUE prediction from covariates.
    Sblue(SblueArgs),
    /// Estimate TGH random-field parameters.
    Fit(FitArgs),
    /// Per-cell l-moment matching across days.
    Lmoments(LmomentsArgs),
    /// k-means over moment surfaces.
    Cluster(ClusterArgs),
    /// Replication experiments.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Grid cells per side.
    #[arg(long, default_value_t = 39)]
    pub side: usize,
    #[arg(long, default_value_t = 1.0)]
    pub cell_size: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub a: f64,
    #[arg(long, default_value_t = 1.0)]
    pub b: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub g: f64,
    #[arg(long, default_value_t = 0.0)]
    pub h: f64,
    /// Range of the exponential kernel.
    #[arg(long, default_value_t = 1.0)]
    pub range: f64,
    /// Nugget share of the unit sill.
    #[arg(long, default_value_t = 0.0)]
    pub nugget: f64,
    /// Number of fields; field k gets day t = k.
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    /// Output field CSV (`x,y,t,value`).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SblueArgs {
    /// Observation CSV (`x,y,t,value`).
    #[arg(long)]
    pub obs: PathBuf,
    /// Covariate CSV (`x,y,cov1,...`); predictions are made at its rows.
    #[arg(long)]
    pub covariates: PathBuf,
    /// Only this day.
    #[arg(long, allow_hyphen_values = true)]
    pub day: Option<i64>,
    /// Days with fewer observations borrow the days before and after.
    #[arg(long, value_name = "MIN_OBS")]
    pub pool_adjacent_days: Option<usize>,
    /// Rank-reduced mode with this many eigen-pairs.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Build the rank-reduced basis by Nyström with `factor × rank` landmarks.
    #[arg(long, value_name = "FACTOR")]
    pub nystrom: Option<usize>,
    /// Box-Cox transform observations (λ fitted once over all days).
    #[arg(long)]
    pub boxcox: bool,
    /// Refit λ for each day.
    #[arg(long, requires = "boxcox")]
    pub boxcox_per_day: bool,
    #[arg(long)]
    pub no_intercept: bool,
    /// Predictions CSV (`t,x,y,prediction`).
    #[arg(long)]
    pub out: PathBuf,
    /// Coefficient table CSV.
    #[arg(long)]
    pub out_coef: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitMode {
    Full,
    Lowrank,
    Sparse,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisKind {
    Exact,
    Nystrom,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub mode: FitMode,
    /// Field CSV (`x,y,t,value`).
    #[arg(long)]
    pub input: PathBuf,
    /// Only this day (sparse mode defaults to the first day).
    #[arg(long, allow_hyphen_values = true)]
    pub day: Option<i64>,
    /// Days with fewer observations borrow the days before and after.
    #[arg(long, value_name = "MIN_OBS")]
    pub pool_adjacent_days: Option<usize>,
    /// Low-rank: number of eigen-pairs (default min(200, n)).
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long, value_enum, default_value_t = BasisKind::Exact)]
    pub basis: BasisKind,
    /// Nyström landmarks (default 2 × rank).
    #[arg(long)]
    pub landmarks: Option<usize>,
    /// Low-rank: reuse `<STEM>.values.csv` / `.vectors.csv` if present, else write them.
    #[arg(long, value_name = "STEM")]
    pub basis_file: Option<PathBuf>,
    /// Sparse: local design budget.
    #[arg(long, default_value_t = 200)]
    pub budget: usize,
    /// Sparse: candidate pool per design step.
    #[arg(long, default_value_t = 1000)]
    pub pool: usize,
    /// Sparse: smooth ln r, g and h across sites.
    #[arg(long)]
    pub smooth: bool,
    /// Sparse: skip the refinement pass.
    #[arg(long)]
    pub no_refine: bool,
    /// Sparse: fixed nugget share of the local correlation.
    #[arg(long, default_value_t = 0.0)]
    pub nugget: f64,
    /// Sparse: smoothing bandwidth (default twice the median neighbour spacing).
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Sparse: starting range (default from a variogram).
    #[arg(long)]
    pub r0: Option<f64>,
    /// Sparse: fit every K-th day from the first and average per site.
    #[arg(long, value_name = "K")]
    pub every: Option<usize>,
    /// Skip the confidence intervals (full and low-rank).
    #[arg(long)]
    pub no_intervals: bool,
    /// Parameter CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-day fit diagnostics CSV (full and low-rank).
    #[arg(long)]
    pub out_diagnostics: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LmomentsArgs {
    /// Field CSV (`x,y,t,value`).
    #[arg(long)]
    pub input: PathBuf,
    /// Cells with fewer non-missing days are written as NaN.
    #[arg(long, default_value_t = 10)]
    pub min_days: usize,
    /// Per-cell CSV (`x,y,a,b,g,h,flag`).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    /// Per-cell CSV with `x,y` and the feature columns.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "a,b,g,h")]
    pub features: String,
    /// Cluster count.
    #[arg(long, conflicts_with = "select_k", required_unless_present = "select_k")]
    pub k: Option<usize>,
    /// AIC/BIC table over `lo..hi` or a list.
    #[arg(long, value_parser = data::int_list)]
    pub select_k: Option<data::IntList>,
    /// Also cluster on these features and report both separations.
    #[arg(long)]
    pub compare_features: Option<String>,
    /// Clusters are numbered by distance from this point (default: centre of the extent).
    #[arg(long, value_parser = data::parse_point, allow_hyphen_values = true)]
    pub reference: Option<(f64, f64)>,
    #[arg(long, default_value_t = 20)]
    pub restarts: usize,
    /// Labels CSV (`x,y,label`) with --k, AIC/BIC table with --select-k.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchProtocol {
    #[value(name = "sparse-C")]
    SparseC,
    #[value(name = "lowrank-B")]
    LowRankB,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub protocol: BenchProtocol,
    #[arg(long)]
    pub reps: Option<usize>,
    /// sparse-C: grid cells per side.
    #[arg(long)]
    pub side: Option<usize>,
    /// sparse-C: local design budget.
    #[arg(long)]
    pub budget: Option<usize>,
    /// sparse-C: comma-separated g values.
    #[arg(long, value_parser = data::float_list, allow_hyphen_values = true)]
    pub g_values: Option<data::FloatList>,
    /// sparse-C: comma-separated h values.
    #[arg(long, value_parser = data::float_list)]
    pub h_values: Option<data::FloatList>,
    /// lowrank-B: number of sites.
    #[arg(long)]
    pub n: Option<usize>,
    /// lowrank-B: eigen-pair counts.
    #[arg(long, value_parser = data::int_list)]
    pub ranks: Option<data::IntList>,
    /// lowrank-B: basis construction.
    #[arg(long, value_enum)]
    pub basis: Option<BasisKind>,
    /// lowrank-B: Nyström landmarks per eigen-pair.
    #[arg(long, default_value_t = 2)]
    pub landmark_factor: usize,
    /// lowrank-B: skip the full-likelihood fit.
    #[arg(long)]
    pub no_full: bool,
    /// Directory for raw.csv, summary.csv and timing.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn exit_code(e: &tghrf::Error) -> u8 {
    if e.is_input() {
        2
    } else {
        3
    }
}

fn run() -> Result<(), (u8, String)> {
    let argv = merge_config_file(std::env::args_os().collect()).map_err(|e| (exit_code(&e), e.to_string()))?;
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let code = e.exit_code() as u8;
            let _ = e.print();
            return Err((code, String::new()));
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| (2, e.to_string()))?;

    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    if let Some(t) = cli.threads {
        if t == 0 {
            return Err((2, "input error: --threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| (2, format!("input error: thread pool: {e}")))?;
    }
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let prov = Provenance { seed, hash: config_hash(&format!("{name} seed={seed}"), sub) };

    let res = match &cli.command {
        Command::Simulate(a) => cmd::simulate::run(a, seed, &prov),
        Command::Sblue(a) => cmd::sblue::run(a, seed, &prov),
        Command::Fit(a) => cmd::fit::run(a, seed, &prov),
        Command::Lmoments(a) => cmd::lmoments::run(a, &prov),
        Command::Cluster(a) => cmd::cluster::run(a, seed, &prov),
        Command::Bench(a) => cmd::bench::run(a, seed, &prov),
    };
    res.map_err(|e| (exit_code(&e), e.to_string()))
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            if !msg.is_empty() {
                eprintln!("tghrf: {msg}");
            }
            ExitCode::from(code)
        }
    }
}
