//! `fedstale` command-line tool.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "fedstale",
    version,
    about = "Federated learning with stale updates under heterogeneous participation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train once and write per-round metrics.
    Run(Common),
    /// Train once per seed and write mean/stderr curves.
    Repeat(Common),
    /// Sweep participation ratio x swap fraction x beta and report beta_opt.
    Grid(Common),
    /// Evaluate the upper-bound terms, rate conditions and beta*.
    Theory(Common),
    /// Check the coordinate frontier and the lower-bound envelope on the hard instance.
    Lowerbound(Common),
    /// Re-run training on a recorded participation trace.
    Replay {
        #[command(flatten)]
        common: Common,
        /// Participation trace CSV (`round,client_id,present`).
        #[arg(long)]
        trace: PathBuf,
    },
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment config (TOML, or JSON with the same schema).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; defaults to `$FEDSTALE_OUT/<command>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root for default output directories.
    #[arg(
        long,
        env = "FEDSTALE_OUT",
        default_value = "fedstale-out",
        hide_env_values = true
    )]
    out_root: PathBuf,
    /// Comma-separated seeds, e.g. `0,1,2`.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Override a config key, e.g. `--set beta=0.8` or `--set training.rounds=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Share the participation sub-seed across aggregation variants.
    #[arg(long)]
    comparability: bool,
    /// Fill the `wall_ns` metrics column (makes metrics differ between runs).
    #[arg(long)]
    wall_time: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common, trace) = match cli.command {
        Command::Run(c) => ("run", c, None),
        Command::Repeat(c) => ("repeat", c, None),
        Command::Grid(c) => ("grid", c, None),
        Command::Theory(c) => ("theory", c, None),
        Command::Lowerbound(c) => ("lowerbound", c, None),
        Command::Replay { common, trace } => ("replay", common, Some(trace)),
    };
    match commands::dispatch(name, &common, trace.as_deref()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
