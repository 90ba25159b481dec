use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qhmc_gp_cli::commands::{self, Options};
use qhmc_gp_cli::selftest::Fault;

#[derive(Parser)]
#[command(name = "qhmc-gp", version, about = "Constrained GP regression benchmarks trained by QHMC")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `out_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed, overriding `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Concurrent sweep cells.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and append a row to results.csv.
    Run,
    /// Run every (n_train, snr_percent) cell of the sweep grid.
    Sweep,
    /// Run one experiment and write trace.csv and trace.svg.
    Trace,
    /// Run the built-in correctness checks.
    Selftest {
        #[arg(long, hide = true)]
        inject_fault: Option<Fault>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let opts = Options {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        jobs: cli.jobs.map(|j| j as usize),
        quiet: cli.quiet,
    };
    let result = match cli.command {
        Command::Run => commands::cmd_run(&opts).map(drop),
        Command::Sweep => commands::cmd_sweep(&opts).map(drop),
        Command::Trace => commands::cmd_trace(&opts).map(drop),
        Command::Selftest { inject_fault } => commands::cmd_selftest(&opts, inject_fault).map(drop),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
