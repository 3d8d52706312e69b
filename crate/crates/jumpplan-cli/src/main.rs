//! `jumpplan` command-line front end.

mod bench;
mod commands;
mod error;
mod manifest;
mod solution;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

/// Environment variable naming the default robot config.
pub const CONFIG_ENV: &str = "JUMPPLAN_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "jumpplan", version, about = "Jump trajectory planning and point-cloud relocalization")]
struct Cli {
    /// Worker threads (0 = all cores). Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plan one jump and verify it in simulation.
    Optimize(OptimizeArgs),
    /// Success rates and search effort over a grid of targets.
    Bench(BenchArgs),
    /// Relocalize a point cloud against a planar patch map.
    Reloc(RelocArgs),
    /// Build, inspect or query a pre-motion library.
    #[command(subcommand)]
    Premotion(PremotionCommand),
    /// Re-simulate a stored solution.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args, Clone)]
pub struct RobotArgs {
    /// Robot preset (mini-cheetah, cyberdog, humanoid) or TOML config path.
    /// Defaults to $JUMPPLAN_CONFIG, then to the preset matching the mode.
    #[arg(long)]
    pub robot: Option<String>,
    /// Optimizer settings as TOML.
    #[arg(long)]
    pub de_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// Landing CoM offset from the take-off CoM, m.
    #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], allow_negative_numbers = true, required = true)]
    pub target: Vec<f64>,
    /// Landing yaw, rad. Only zero is supported.
    #[arg(long, allow_negative_numbers = true)]
    pub yaw: Option<f64>,
    #[arg(long, default_value = "omni")]
    pub mode: String,
    #[command(flatten)]
    pub robot: RobotArgs,
    /// Pre-motion library directory used for a warm start.
    #[arg(long)]
    pub library: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Allow a straight-up target.
    #[arg(long)]
    pub vertical: bool,
    /// Window as 12 numbers: upper box centre and size, lower box centre and size.
    #[arg(long, num_args = 12, allow_negative_numbers = true)]
    pub obstacle: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Target box as X0 X1 Y0 Y1 Z0 Z1, m.
    #[arg(long, num_args = 6, allow_negative_numbers = true, required = true)]
    pub grid: Vec<f64>,
    #[arg(long)]
    pub step: f64,
    /// Comma-separated jump modes.
    #[arg(long, default_value = "omni", value_delimiter = ',')]
    pub modes: Vec<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub grid: GridArgs,
    /// Independent seeds per target.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub robot: RobotArgs,
    /// Library for the warm-start column.
    #[arg(long)]
    pub library: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RelocArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub cloud: PathBuf,
    /// Sensor height in the map frame, m.
    #[arg(long, allow_negative_numbers = true)]
    pub z_star: f64,
    /// Inlier threshold, m.
    #[arg(long, default_value_t = reloc::DEFAULT_EPS)]
    pub eps: f64,
    /// Measured gravity direction in the sensor frame; the cloud is levelled first.
    #[arg(long, num_args = 3, allow_negative_numbers = true)]
    pub gravity: Option<Vec<f64>>,
    /// Stop after the branch-and-bound stage.
    #[arg(long)]
    pub no_refine: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum PremotionCommand {
    /// Solve every grid target and store the feasible ones.
    Build(BuildArgs),
    /// Summarize a stored library.
    Stats(StatsArgs),
    /// Find the stored solution nearest to a target.
    Lookup(LookupArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub robot: RobotArgs,
    /// Library directory; an existing library there is extended.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub library: PathBuf,
    /// Re-evaluate every entry and list the ones no longer feasible.
    #[arg(long)]
    pub verify: bool,
    #[command(flatten)]
    pub robot: RobotArgs,
}

#[derive(Debug, Args)]
pub struct LookupArgs {
    #[arg(long)]
    pub library: PathBuf,
    #[arg(long, num_args = 3, allow_negative_numbers = true, required = true)]
    pub target: Vec<f64>,
    #[arg(long, default_value = "omni")]
    pub mode: String,
    #[arg(long, default_value_t = jumpplan::premotion::LOOKUP_RADIUS)]
    pub radius: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Solution file written by `optimize`.
    #[arg(long)]
    pub solution: PathBuf,
    #[command(flatten)]
    pub robot: RobotArgs,
    /// Integration step, s.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {} threads: {e}", cli.threads)))?;
    }
    match cli.command {
        Command::Optimize(a) => commands::optimize(&a),
        Command::Bench(a) => bench::run(&a),
        Command::Reloc(a) => commands::reloc(&a),
        Command::Premotion(PremotionCommand::Build(a)) => commands::premotion_build(&a),
        Command::Premotion(PremotionCommand::Stats(a)) => commands::premotion_stats(&a),
        Command::Premotion(PremotionCommand::Lookup(a)) => commands::premotion_lookup(&a),
        Command::Simulate(a) => commands::simulate(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { error::USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
