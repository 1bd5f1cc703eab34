//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::{
    cmd_curve, cmd_evaluate, cmd_mstar, cmd_simulate, cmd_verify, Format, Output, RunOptions,
    StrategyChoice, Sweep,
};
use crate::error::CliResult;
use crate::scenario::{Scenario, SimOverrides};

#[derive(Debug, Parser)]
#[command(
    name = "ratchet-ruin",
    version,
    about = "Minimum probability of lifetime ruin with ratcheting consumption"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ruin probability, optimal strategy and boundary data at the scenario state.
    Evaluate(Common),
    /// Table of psi, strategy and benchmark along a sweep.
    Curve {
        #[command(flatten)]
        common: Common,
        /// `w:<lo>:<hi>:<n>` or `m:<lo>:<hi>:<n>`.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Level at which ratcheting stops, with the condition profile.
    Mstar {
        #[command(flatten)]
        common: Common,
        /// Growth factor of the coarse search grid.
        #[arg(long)]
        grid_factor: Option<f64>,
    },
    /// Monte Carlo ruin estimate with an analytic cross-check.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// `optimal`, `constant_amount:<x>` or `constant_proportion:<x>`.
        #[arg(long, default_value = "optimal")]
        strategy: String,
    },
    /// Residual and inequality checks for the scenario's regime.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Scale the dual coefficient D1 by this factor (negative control).
        #[arg(long)]
        perturb_d1: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: FormatArg,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub paths: Option<usize>,
    /// Time step in years.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Cache file for the integrated moving boundary.
    #[arg(long)]
    pub boundary_cache: Option<PathBuf>,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            format: match self.format {
                FormatArg::Json => Format::Json,
                FormatArg::Csv => Format::Csv,
            },
            sim: SimOverrides {
                dt_years: self.dt,
                paths: self.paths,
                seed: self.seed,
                threads: self.threads,
                ..SimOverrides::default()
            },
            boundary_cache: self.boundary_cache.clone(),
        }
    }
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Evaluate(c) => c,
            Command::Curve { common, .. }
            | Command::Mstar { common, .. }
            | Command::Simulate { common, .. }
            | Command::Verify { common, .. } => common,
        }
    }

    pub fn run(&self) -> CliResult<Output> {
        let common = self.common();
        let scenario = Scenario::load(&common.scenario)?;
        let opts = common.options();
        match self {
            Command::Evaluate(_) => cmd_evaluate(&scenario, &opts),
            Command::Curve { sweep, .. } => {
                let sweep = sweep.as_deref().map(str::parse::<Sweep>).transpose()?;
                cmd_curve(&scenario, sweep, &opts)
            }
            Command::Mstar { grid_factor, .. } => cmd_mstar(&scenario, *grid_factor, &opts),
            Command::Simulate { strategy, .. } => {
                cmd_simulate(&scenario, strategy.parse::<StrategyChoice>()?, &opts)
            }
            Command::Verify { perturb_d1, .. } => cmd_verify(&scenario, *perturb_d1, &opts),
        }
    }
}
