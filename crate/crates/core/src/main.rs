use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use seepage::driver::DriverError;
use seepage::io::config::{self, RunConfig};
use seepage::io::{run, RunOptions};
use seepage::problem::{benchmark, BENCHMARKS};

#[derive(Parser)]
#[command(name = "seepage", version, about = "Adaptive FEM for groundwater flow with seepage faces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the adaptive loop.
    Run(RunArgs),
    /// Print the configuration of a built-in benchmark as TOML.
    Config {
        #[arg(long)]
        benchmark: String,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long, conflicts_with = "benchmark")]
    config: Option<PathBuf>,
    /// Built-in benchmark: example1, example2, case1 or case2.
    #[arg(long)]
    benchmark: Option<String>,
    /// Refine uniformly instead of adaptively.
    #[arg(long)]
    uniform: bool,
    #[arg(long)]
    max_cycles: Option<usize>,
    #[arg(long)]
    max_dofs: Option<usize>,
    /// Dörfler fraction.
    #[arg(long)]
    theta: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Compute a reference goal value on this many uniform refinements of
    /// the final mesh and fill the error columns.
    #[arg(long)]
    reference_levels: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

const EXIT_SOLVER: u8 = 1;
const EXIT_INPUT: u8 = 2;

fn load(args: &RunArgs) -> Result<RunConfig, String> {
    let mut cfg = match (&args.config, &args.benchmark) {
        (Some(path), None) => config::load_config(path).map_err(|e| format!("{}: {e}", path.display()))?,
        (None, Some(name)) => RunConfig::with_defaults(benchmark(name).ok_or_else(|| {
            format!("unknown benchmark `{name}` (expected one of {})", BENCHMARKS.join(", "))
        })?),
        _ => return Err("give exactly one of --config or --benchmark".into()),
    };
    if args.uniform {
        cfg.adaptivity.uniform = true;
    }
    if let Some(n) = args.max_cycles {
        cfg.adaptivity.max_cycles = n;
    }
    if let Some(n) = args.max_dofs {
        cfg.adaptivity.max_dofs = n;
    }
    if let Some(t) = args.theta {
        cfg.adaptivity.theta = t;
    }
    cfg.adaptivity.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Config { benchmark: name } => match benchmark(&name) {
            Some(p) => {
                print!("{}", config::to_toml(&RunConfig::with_defaults(p)));
                ExitCode::SUCCESS
            }
            None => {
                eprintln!("error: unknown benchmark `{name}`");
                ExitCode::from(EXIT_INPUT)
            }
        },
        Command::Run(args) => {
            let cfg = match load(&args) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_INPUT);
                }
            };
            let opts = RunOptions { reference_levels: args.reference_levels, reference_max_dofs: 0, quiet: args.quiet };
            match run(&cfg, &args.out, &opts) {
                Ok(summary) => {
                    if !args.quiet {
                        if let Some(last) = summary.records.last() {
                            eprintln!("final goal value {:.16e} on {} dofs", last.goal, last.n_dofs);
                        }
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    match e {
                        DriverError::Problem(_) | DriverError::Mesh(_) | DriverError::Io(_) => {
                            ExitCode::from(EXIT_INPUT)
                        }
                        _ => ExitCode::from(EXIT_SOLVER),
                    }
                }
            }
        }
    }
}
