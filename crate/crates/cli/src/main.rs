//! `pivchol` command-line tool.
//!
//! Exit codes: 0 ok, 1 verification failure, 2 argument or scale error,
//! 3 numeric error, 4 solver divergence. Parallel sections use the rayon
//! pool, sized by `RAYON_NUM_THREADS` when set.

mod args;
mod commands;
mod output;

use clap::{Parser, Subcommand};

use crate::output::{EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "pivchol", version, about = "Lazy pivoted Cholesky of kernel matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Factor a kernel matrix and write the factor, trace curve and manifest.
    Decompose(commands::DecomposeArgs),
    /// Run the oracle battery on random instances, or check a stored factor.
    Verify(commands::VerifyArgs),
    /// Solve (K + σ²I) x = b with conjugate gradients.
    Solve(commands::SolveArgs),
    /// Compare subspace and pointwise farthest-point sampling.
    CompareSampling(commands::CompareArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match &cli.command {
        Command::Decompose(a) => commands::decompose(a),
        Command::Verify(a) => commands::verify(a),
        Command::Solve(a) => commands::solve(a),
        Command::CompareSampling(a) => commands::compare_sampling(a),
    };
    match result {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.code);
        }
    }
}
