use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use multipoet::estimators::TauChoice;

pub fn parse_tau(s: &str) -> Result<TauChoice, String> {
    match s {
        "pd" => Ok(TauChoice::PdCalibrated),
        "rate" => Ok(TauChoice::Rate),
        _ => match s.parse::<f64>() {
            Ok(t) if t >= 0.0 && t.is_finite() => Ok(TauChoice::Fixed(t)),
            _ => Err(format!("expected a non-negative number, `rate` or `pd`, got '{s}'")),
        },
    }
}

#[derive(Debug, Parser)]
#[command(name = "multipoet", version, about = "Multi-level factor covariance estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo comparison of estimators on simulated panels.
    Simulate(SimulateArgs),
    /// Draw one simulated panel and write it as CSV.
    Generate(GenerateArgs),
    /// Estimate a covariance matrix from a returns file.
    Estimate(EstimateArgs),
    /// Choose the number of global factors.
    Select(SelectArgs),
    /// Detect group membership with regularized spectral clustering.
    Cluster(ClusterArgs),
    /// Rolling minimum-variance backtest under a gross-exposure bound.
    Backtest(BacktestArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Soft,
    Hard,
    Sector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VaryArg {
    /// Grid values are asset counts `p` with `--groups` fixed.
    P,
    /// Grid values are group counts `J` with `--group-size` fixed.
    Groups,
    /// Grid values are membership error rates for `dpoet_mix`.
    Mix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Full,
    Local,
}

/// Options shared by every estimation command.
#[derive(Debug, Clone, Args)]
pub struct FactorArgs {
    /// Global factor count (selected from the data when omitted).
    #[arg(long)]
    pub k: Option<usize>,
    /// Local factor counts: one value for every group or a comma list.
    #[arg(long, value_delimiter = ',')]
    pub r: Option<Vec<usize>>,
    #[arg(long)]
    pub kmax: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub rmax: usize,
    #[arg(long, default_value_t = 0.3)]
    pub phi_scale: f64,
    /// Threshold constant: a number, `rate` (0.5 times the rate) or `pd`
    /// (smallest positive-definite constant plus a margin).
    #[arg(long, value_parser = parse_tau, default_value = "pd")]
    pub tau: TauChoice,
    #[arg(long, value_enum, default_value_t = RuleArg::Soft)]
    pub rule: RuleArg,
    /// `asset_id,sector` file for `--rule sector`.
    #[arg(long)]
    pub sectors: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = VaryArg::P)]
    pub vary: VaryArg,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    /// Asset count for `--vary mix`.
    #[arg(long, default_value_t = 300)]
    pub p: usize,
    #[arg(long, default_value_t = 10)]
    pub groups: usize,
    #[arg(long, default_value_t = 30)]
    pub group_size: usize,
    #[arg(long, default_value_t = 300)]
    pub t: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Local factors per group.
    #[arg(long, default_value_t = 2)]
    pub r: usize,
    /// Sparsity constant of the error covariance.
    #[arg(long, default_value_t = 0.3)]
    pub m: f64,
    #[arg(long, value_delimiter = ',', default_value = "samcov,poet,poet2,dpoet")]
    pub methods: Vec<String>,
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = TargetArg::Full)]
    pub target: TargetArg,
    /// Use the true factor counts instead of selecting them.
    #[arg(long)]
    pub oracle_counts: bool,
    /// Same forms as for `estimate`.
    #[arg(long, value_parser = parse_tau, default_value = "pd")]
    pub tau: TauChoice,
    #[arg(long, value_enum, default_value_t = RuleArg::Soft)]
    pub rule: RuleArg,
    #[arg(long, default_value_t = 10)]
    pub rmax: usize,
    #[arg(long, default_value_t = 0.3)]
    pub phi_scale: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    pub p: usize,
    #[arg(long, default_value_t = 10)]
    pub groups: usize,
    #[arg(long, default_value_t = 300)]
    pub t: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 2)]
    pub r: usize,
    #[arg(long, default_value_t = 0.3)]
    pub m: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub returns: PathBuf,
    /// `samcov`, `poet`, `poet2`, `double_poet` or `identity`.
    #[arg(long, default_value = "double_poet")]
    pub method: String,
    #[arg(long)]
    pub membership: Option<PathBuf>,
    /// Detect this many groups instead of reading a membership file.
    #[arg(long)]
    pub cluster: Option<usize>,
    /// Known membership to score detected groups against.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the global, local and residual parts.
    #[arg(long)]
    pub parts: bool,
    #[command(flatten)]
    pub factors: FactorArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub returns: PathBuf,
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Used for the default `kmax` only.
    #[arg(long, default_value_t = 10)]
    pub rmax: usize,
    /// Group count assumed by the default `kmax`.
    #[arg(long, default_value_t = 1)]
    pub groups: usize,
    #[arg(long, default_value_t = 0.3)]
    pub phi_scale: f64,
    /// Machine-readable output.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub returns: PathBuf,
    /// Number of groups to detect.
    #[arg(long)]
    pub cluster: usize,
    /// Global factors removed before clustering (selected when omitted).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub kmax: Option<usize>,
    #[arg(long, default_value_t = 0.3)]
    pub phi_scale: f64,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BacktestArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub returns: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "samcov,poet,double_poet")]
    pub method: Vec<String>,
    #[arg(long)]
    pub membership: Option<PathBuf>,
    #[arg(long, default_value_t = 104)]
    pub window: usize,
    #[arg(long, default_value_t = 4)]
    pub hold: usize,
    /// Hold for a fixed number of rows even when dates are present.
    #[arg(long)]
    pub no_calendar: bool,
    #[arg(long, value_delimiter = ',', default_value = "1,1.5,2,2.5,3,3.5,4")]
    pub c_grid: Vec<f64>,
    /// Lift non-positive-definite estimates instead of skipping the period.
    #[arg(long)]
    pub repair: bool,
    #[command(flatten)]
    pub factors: FactorArgs,
    #[arg(long)]
    pub out: PathBuf,
}
