use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use chase_core::cli;

/// Sample-and-check chasing planner: scenario runs and benchmark suites.
#[derive(Parser)]
#[command(name = "chase", version)]
struct Args {
    /// Worker threads for candidate evaluation and suite runs (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    parallel: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario file.
    Run {
        file: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Simulate every *.json scenario in a directory.
    Bench {
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CHASE_LOG", "warn")).init();
    let args = Args::parse();
    #[cfg(feature = "parallel")]
    if args.parallel > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(args.parallel).build_global() {
            eprintln!("--parallel: {e}");
            return ExitCode::from(cli::EXIT_INPUT as u8);
        }
    }
    let code = match &args.command {
        Command::Run { file, out, seed } => cli::cmd_run(file, out, *seed),
        Command::Bench { dir, out, seed } => cli::cmd_bench(dir, out, *seed),
    };
    ExitCode::from(code as u8)
}
