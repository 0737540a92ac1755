//! Implementations behind the CLI verbs; `main` only parses arguments.

use crate::config::{ConfigArgs, OracleSpec, TrainConfig};
use crate::error::{CliError, Result};
use crate::runlog::write_run_log;
use crate::suites;
use crate::sweep::stability_sweep;
use proxprop_core::verify::gram_conditioning;
use proxprop_core::{optim, RunLog, TrainSettings};
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;

/// Trains one configuration and returns the log, without touching the
/// filesystem.
pub fn run_training(config: &TrainConfig) -> Result<RunLog> {
    config.validate()?;
    let (train, val) = config.load_data()?;
    let mut net = config.build_network(&train)?;
    let settings = TrainSettings {
        optimizer: config.optimizer.to_kind(),
        lr: config.tau,
        batch_size: config.batch_size,
        epochs: config.epochs,
        seed: config.seed,
    };
    Ok(optim::train(
        &mut net,
        &train,
        val.as_ref(),
        &settings,
        &config.oracle(),
    )?)
}

/// `train`: runs the configuration and persists the log. Exit code 2 marks
/// a diverged run.
pub fn cmd_train(args: &ConfigArgs, out: Option<&Path>) -> Result<i32> {
    let config = args.resolve()?;
    let log = run_training(&config)?;
    let out = out
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("proxprop_run.jsonl"));
    let csv = write_run_log(&out, &config, &log)?;
    for r in &log.records {
        let val = r
            .val_accuracy
            .map(|v| format!(" val_accuracy={v:.4}"))
            .unwrap_or_default();
        println!(
            "epoch={} loss={:.6}{} elapsed={:.2}s diverged={}",
            r.epoch, r.train_loss, val, r.elapsed_seconds, r.diverged
        );
    }
    println!("log={} csv={}", out.display(), csv.display());
    Ok(if log.diverged { EXIT_DIVERGED } else { EXIT_OK })
}

/// `sweep`: a (tau, oracle) stability grid written as a CSV table.
pub fn cmd_sweep(
    args: &ConfigArgs,
    taus: &[f64],
    oracles: &[String],
    out: Option<&Path>,
    workers: Option<usize>,
) -> Result<i32> {
    if taus.is_empty() || oracles.is_empty() {
        return Err(CliError::Config("sweep needs --taus and --oracles".into()));
    }
    let config = args.resolve()?;
    let oracles: Result<Vec<OracleSpec>> =
        oracles.iter().map(|s| OracleSpec::parse(s)).collect();
    let oracles = oracles?;
    let workers = workers.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });
    let table = stability_sweep(&config, taus, &oracles, workers)?;
    let csv = table.to_csv();
    print!("{csv}");
    if let Some(path) = out {
        std::fs::write(path, &csv).map_err(|e| CliError::io(path, e))?;
        println!("table={}", path.display());
    }
    Ok(EXIT_OK)
}

/// `verify`: runs the property suites and reports one line per suite.
pub fn cmd_verify(seeds: u64, suite: Option<&str>) -> Result<i32> {
    let outcomes = match suite {
        None | Some("all") => suites::run_all(seeds)?,
        Some("equivalence") => vec![suites::suite_equivalence(seeds)?],
        Some("gradcheck") => vec![suites::suite_gradcheck(20, 200)?],
        Some("descent") => vec![suites::suite_descent(100)?],
        Some("spectral") => vec![suites::suite_spectral(seeds)?],
        Some("prox-stability") => vec![suites::suite_prox_stability(seeds)?],
        Some("fd-order") => vec![suites::suite_fd_order()?],
        Some(other) => {
            return Err(CliError::Config(format!("unknown suite '{other}'")));
        }
    };
    let mut all_pass = true;
    for o in &outcomes {
        println!("{o}");
        all_pass &= o.pass;
    }
    Ok(if all_pass { EXIT_OK } else { EXIT_ERROR })
}

/// `probe-conditioning`: extreme eigenvalues of the dataset Gram matrix.
pub fn cmd_probe_conditioning(args: &ConfigArgs) -> Result<i32> {
    let config = args.resolve()?;
    let (train, _) = config.load_data()?;
    let (lambda_max, lambda_min, ratio) = gram_conditioning(&train.x)?;
    println!(
        "samples={} features={} lambda_max={lambda_max:.6e} lambda_min={lambda_min:.6e} ratio={ratio:.6e}",
        train.len(),
        train.feature_dim()
    );
    Ok(EXIT_OK)
}
