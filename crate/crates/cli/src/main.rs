mod commands;
mod layer;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use graphinit::init::InitMode;
use graphinit::tensor::Activation;

use crate::layer::LayerArgs;

#[derive(Debug, Parser)]
#[command(
    name = "graphinit",
    version,
    about = "Backbone-graph initialization for tensorial layers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Backbone graphs, edge products and every initialization variance of one layer.
    Analyze {
        #[command(flatten)]
        layer: LayerArgs,
        #[arg(long, value_enum, default_value = "tanh")]
        act: ActArg,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Forward and backward variance traces of a stacked network.
    Simulate(SimulateArgs),
    /// Factorization grid, variance laws and the propagation-factor sweep.
    Verify {
        #[arg(long)]
        seed: u64,
        /// Random formats in the propagation-factor sweep.
        #[arg(long, default_value_t = 200)]
        count: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Writes seeded random layer formats as TOML files.
    Randgen(RandgenArgs),
    /// Empirical scale of a chain of random contractions.
    ScaleChain {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        trials: usize,
        /// Chain dimensions; defaults to the built-in chain.
        #[arg(long, value_delimiter = ',')]
        dims: Vec<usize>,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    layer: LayerArgs,
    /// Five-layer grid stack instead of a repeated layer.
    #[arg(long, conflicts_with_all = ["format", "builtin"])]
    odd_stack: bool,
    #[arg(long, value_parser = parse_mode, default_value = "graph-in")]
    mode: InitMode,
    #[arg(long, value_enum, default_value = "tanh")]
    act: ActArg,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    trials: usize,
    /// Number of stacked layers when a single format is given.
    #[arg(long, default_value_t = 5)]
    depth: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct RandgenArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    count: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    min_vertices: usize,
    #[arg(long, default_value_t = 8)]
    max_vertices: usize,
    #[arg(long, default_value_t = 1)]
    phi: usize,
    /// Generate linear layers without kernel windows.
    #[arg(long)]
    linear: bool,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    emit: Emit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Emit {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ActArg {
    Tanh,
    Relu,
    Identity,
}

impl From<ActArg> for Activation {
    fn from(a: ActArg) -> Self {
        match a {
            ActArg::Tanh => Activation::Tanh,
            ActArg::Relu => Activation::Relu,
            ActArg::Identity => Activation::Identity,
        }
    }
}

fn parse_mode(s: &str) -> Result<InitMode, String> {
    s.parse().map_err(|e: graphinit::Error| e.to_string())
}

/// Failure classes and their exit codes.
#[derive(Debug)]
enum Failure {
    Invalid(anyhow::Error),
    Verification(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Invalid(e)
    }
}

impl From<graphinit::Error> for Failure {
    fn from(e: graphinit::Error) -> Self {
        Failure::Invalid(e.into())
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Analyze { layer, act, output } => commands::analyze(&layer, act.into(), &output),
        Command::Simulate(args) => commands::simulate(&args),
        Command::Verify { seed, count, output } => commands::verify(seed, count, &output),
        Command::Randgen(args) => commands::randgen(&args),
        Command::ScaleChain {
            seed,
            trials,
            dims,
            output,
        } => commands::scale_chain(seed, trials, &dims, &output),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(3)
        }
    }
}
