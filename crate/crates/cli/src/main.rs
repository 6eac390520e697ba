use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod failure;
mod figures;
mod inputs;
mod output;

use failure::exit_code;
use inputs::SimFlags;

#[derive(Parser, Debug)]
#[command(name = "mfcce", version, about = "Equilibria of linear-quadratic mean field games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Model file (sections [model]/[initial] or [abatement], optional [sim])
    #[arg(long)]
    model: PathBuf,
    /// Time steps of the grid [default: 2000]
    #[arg(long)]
    grid_n: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct SimArgs {
    /// Monte Carlo paths [default: 100000]
    #[arg(long)]
    paths: Option<usize>,
    /// Monte Carlo seed [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// Antithetic pairs; --paths then counts pairs
    #[arg(long)]
    antithetic: bool,
    /// Heun instead of Euler–Maruyama
    #[arg(long)]
    heun: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum What {
    Ne,
    Mfc,
    Deviation,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve for the Nash equilibrium, the control optimum or the best deviation
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        what: What,
        /// Scenario law whose mean flow the deviation answers
        #[arg(long, required_if_eq("what", "deviation"))]
        law: Option<PathBuf>,
        /// Output directory; the CSV goes to stdout without it
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check whether a scenario law induces a coarse correlated equilibrium
    CheckCce {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        law: PathBuf,
        /// Confirm by simulation with this many paths
        #[arg(long, value_name = "M")]
        simulate: Option<usize>,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the data behind a figure of the abatement game
    Figure {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
        which: u8,
        #[arg(long)]
        out: PathBuf,
        /// Law for figures 1 and 2 [default: z1 = 0.6, sigma2 = 0.06]
        #[arg(long)]
        law: Option<PathBuf>,
        /// Samples along z1 (figures 3, 5) or eps (figure 4)
        #[arg(long)]
        points: Option<usize>,
        /// Right end of the eps sweep of figure 4
        #[arg(long, default_value_t = 3.0)]
        eps_max: f64,
        /// Write an empty region instead of failing
        #[arg(long)]
        allow_empty: bool,
    },
}

fn flags(common: &Common, sim: Option<&SimArgs>) -> SimFlags {
    SimFlags {
        grid_n: common.grid_n,
        paths: sim.and_then(|s| s.paths),
        seed: sim.and_then(|s| s.seed),
        antithetic: sim.is_some_and(|s| s.antithetic),
        heun: sim.is_some_and(|s| s.heun),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Solve { common, what, law, out } => commands::solve(
            &common.model,
            &flags(&common, None),
            what,
            law.as_deref(),
            out.as_deref(),
        ),
        Command::CheckCce {
            common,
            law,
            simulate,
            sim,
            out,
        } => commands::check_cce(&common.model, &flags(&common, Some(&sim)), &law, simulate, out.as_deref()),
        Command::Figure {
            common,
            which,
            out,
            law,
            points,
            eps_max,
            allow_empty,
        } => figures::figure(
            &common.model,
            &flags(&common, None),
            &figures::FigureOptions {
                which,
                law,
                points,
                eps_max,
                allow_empty,
            },
            &out,
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
