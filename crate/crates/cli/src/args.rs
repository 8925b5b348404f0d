use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "ensemblelab",
    version,
    about = "Maximum-entropy ensembles, reachability oracles and macroscopic-limit experiments"
)]
pub struct Cli {
    #[command(flatten)]
    pub run: RunArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Options shared by every subcommand.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// Write output to FILE instead of stdout
    #[arg(long, global = true, value_name = "FILE")]
    pub out: Option<PathBuf>,

    /// Output format (tables default to csv, everything else to json)
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Seed for anything that samples
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Residual accepted by the ensemble fits
    #[arg(long, global = true, value_name = "F", value_parser = positive)]
    pub tol_fit: Option<f64>,

    /// Slack allowed when deciding reachability
    #[arg(long, global = true, value_name = "F", value_parser = positive)]
    pub tol_decision: Option<f64>,

    /// Deviation accepted when checking a state against a macrostate
    #[arg(long, global = true, value_name = "F", value_parser = positive)]
    pub tol_compatibility: Option<f64>,
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a positive number, got {s}"))
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the maximum-entropy ensemble to a macrostate
    Fit(FitArgs),
    /// Decide whether a macrostate can reach a target microstate
    Reach(ReachArgs),
    /// Optimal work extractable from a macrostate with a bath
    Work(WorkArgs),
    /// Ergotropy of a diagonal state
    Ergotropy(ErgotropyArgs),
    /// Swap a compatible state with a rescaled thermal environment
    Swap(SwapArgs),
    /// Ergotropy of many copies of two Gibbs states at different temperatures
    Trivialize(TrivializeArgs),
    /// Gibbs-preserving LP constants and energy bounds
    Gpmap(GpmapArgs),
    /// Class-preserving vs thermal reachable energies along an energy grid
    Breakdown(BreakdownArgs),
    /// Exact ensemble distillation over a list of copy numbers
    Distill(DistillArgs),
    /// Moments of the total energy change of many independent subsystems
    Clt(CltArgs),
}

#[derive(Debug, Args)]
pub struct SpectrumArg {
    /// JSON file: {"d", "n", "eigenvalues": [[...]], "values": [...]}
    #[arg(long, value_name = "FILE")]
    pub spectrum: PathBuf,
}

#[derive(Debug, Args)]
pub struct MacroArgs {
    /// Mean energy (single observable)
    #[arg(long, value_name = "F", allow_negative_numbers = true, conflicts_with = "values")]
    pub energy: Option<f64>,

    /// Mean values, one per observable (overrides "values" in the spectrum file)
    #[arg(long, value_name = "LIST", value_delimiter = ',', allow_negative_numbers = true)]
    pub values: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub spectrum: SpectrumArg,
    #[command(flatten)]
    pub macrostate: MacroArgs,
}

#[derive(Debug, Args)]
pub struct ReachArgs {
    #[command(flatten)]
    pub spectrum: SpectrumArg,
    #[command(flatten)]
    pub macrostate: MacroArgs,
    /// Environment inverse temperatures, one per observable
    #[arg(long, value_name = "LIST", value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub beta: Vec<f64>,
    /// Target populations in input level order
    #[arg(long, value_name = "LIST", value_delimiter = ',', required = true)]
    pub p: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct WorkArgs {
    #[command(flatten)]
    pub spectrum: SpectrumArg,
    #[command(flatten)]
    pub macrostate: MacroArgs,
    #[arg(long, value_name = "F", allow_negative_numbers = true)]
    pub beta: f64,
}

#[derive(Debug, Args)]
pub struct ErgotropyArgs {
    #[command(flatten)]
    pub spectrum: SpectrumArg,
    #[arg(long, value_name = "LIST", value_delimiter = ',', required = true)]
    pub p: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct SwapArgs {
    #[command(flatten)]
    pub spectrum: SpectrumArg,
    #[command(flatten)]
    pub macrostate: MacroArgs,
    #[arg(long, value_name = "F", allow_negative_numbers = true)]
    pub beta: f64,
    /// System populations; sampled from the macrostate (with --seed) when absent
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    pub p: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct TrivializeArgs {
    /// Spectrum of the first bath
    #[arg(long, value_name = "FILE")]
    pub spectrum: std::path::PathBuf,
    /// Spectrum of the second bath (defaults to the first)
    #[arg(long, value_name = "FILE")]
    pub spectrum2: Option<std::path::PathBuf>,
    /// Inverse temperatures of the two baths
    #[arg(long, value_name = "B1,B2", value_delimiter = ',', num_args = 1, required = true)]
    pub beta: Vec<f64>,
    /// Copy numbers n (n copies of each bath)
    #[arg(long, value_name = "LIST", value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub copies: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct GpmapArgs {
    #[command(flatten)]
    pub spectrum: SpectrumArg,
    #[arg(long, value_name = "F", allow_negative_numbers = true)]
    pub beta: f64,
    /// Energy of the class to bound
    #[arg(long, value_name = "F", allow_negative_numbers = true)]
    pub energy: Option<f64>,
    /// Microstate to decompose and bound
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    pub p: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct BreakdownArgs {
    #[command(flatten)]
    pub spectrum: SpectrumArg,
    #[arg(long, value_name = "F", allow_negative_numbers = true)]
    pub beta: f64,
    /// Number of interior grid points
    #[arg(long, value_name = "INT", default_value_t = 41)]
    pub grid: usize,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub spectrum: SpectrumArg,
    /// Initial populations of every copy
    #[arg(long, value_name = "LIST", value_delimiter = ',', required = true)]
    pub p: Vec<f64>,
    #[arg(long, value_name = "LIST", value_delimiter = ',', default_value = "1,2,4,8,16,32,64")]
    pub copies: Vec<usize>,
    /// Largest denominator used when rationalizing eigenvalues
    #[arg(long, value_name = "INT", default_value_t = 1000)]
    pub max_denominator: u64,
}

#[derive(Debug, Args)]
pub struct CltArgs {
    #[command(flatten)]
    pub spectrum: SpectrumArg,
    /// Initial populations of each subsystem
    #[arg(long, value_name = "LIST", value_delimiter = ',', required = true)]
    pub p: Vec<f64>,
    /// Final state is the Gibbs state at this inverse temperature
    #[arg(long, value_name = "F", allow_negative_numbers = true, conflicts_with = "energy")]
    pub beta: Option<f64>,
    /// Final state is the canonical ensemble at this energy
    #[arg(long, value_name = "F", allow_negative_numbers = true)]
    pub energy: Option<f64>,
    /// Numbers of subsystems N
    #[arg(long, value_name = "LIST", value_delimiter = ',', default_value = "16,64,256")]
    pub copies: Vec<usize>,
}
