use clap::{Args, Parser, Subcommand};
use proxprop_cli::commands;
use proxprop_cli::ConfigArgs;
use std::path::PathBuf;

/// Train feed-forward networks with backpropagation or proximal first-order
/// oracles, sweep step-size stability, and verify the solver's properties.
#[derive(Parser)]
#[command(name = "proxprop", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training configuration and write its log
    Train(TrainArgs),
    /// Train a grid of (tau, oracle) cells and tabulate final losses
    Sweep(SweepArgs),
    /// Run the verification suites
    Verify(VerifyArgs),
    /// Probe the extreme eigenvalues of the dataset Gram matrix
    ProbeConditioning(ProbeArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Log path; the CSV mirror lands next to it
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Comma-separated step sizes, e.g. 10,1,0.1,0.05,5e-3
    #[arg(long, value_delimiter = ',', required = true)]
    taus: Vec<f64>,
    /// Comma-separated oracles, e.g. backprop,proxprop_cg3
    #[arg(long, value_delimiter = ',', required = true)]
    oracles: Vec<String>,
    /// Write the table here as CSV (always printed to stdout)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel worker threads (default: available cores)
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Seeds / instances per suite
    #[arg(long, default_value_t = 50)]
    seeds: u64,
    /// all | equivalence | gradcheck | descent | spectral | prox-stability | fd-order
    #[arg(long)]
    suite: Option<String>,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
}

fn main() {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Train(a) => commands::cmd_train(&a.cfg, a.out.as_deref()),
        Command::Sweep(a) => {
            commands::cmd_sweep(&a.cfg, &a.taus, &a.oracles, a.out.as_deref(), a.workers)
        }
        Command::Verify(a) => commands::cmd_verify(a.seeds, a.suite.as_deref()),
        Command::ProbeConditioning(a) => commands::cmd_probe_conditioning(&a.cfg),
    };
    let code = match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            commands::EXIT_ERROR
        }
    };
    std::process::exit(code);
}
