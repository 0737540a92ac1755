//! Run log persistence: line-delimited self-describing records plus a plain
//! CSV mirror for plotting.
//!
//! The JSONL file starts with a header record echoing the resolved
//! configuration (enough to reproduce the run bit-identically) and carries
//! wall-clock timings. The CSV mirror holds only the deterministic fields,
//! so re-running the same configuration yields a byte-identical CSV body.

use crate::config::TrainConfig;
use crate::error::{CliError, Result};
use proxprop_core::RunLog;
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Serialize)]
struct HeaderRecord<'a> {
    record: &'static str,
    version: &'static str,
    config: &'a TrainConfig,
}

#[derive(Serialize)]
struct EpochJson {
    record: &'static str,
    epoch: usize,
    full_batch_train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    val_accuracy: Option<f64>,
    elapsed_seconds: f64,
    diverged: bool,
}

/// The deterministic CSV mirror: `epoch,loss,val_acc,diverged`.
pub fn csv_body(log: &RunLog) -> String {
    let mut out = String::from("epoch,loss,val_acc,diverged\n");
    for r in &log.records {
        let val = r
            .val_accuracy
            .map(|v| v.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.train_loss, val, r.diverged
        ));
    }
    out
}

/// Path of the CSV mirror next to a JSONL log path.
pub fn csv_path(out: &Path) -> PathBuf {
    out.with_extension("csv")
}

/// Writes `<out>` as JSONL and `<out with .csv>` as the mirror. Returns the
/// CSV path.
pub fn write_run_log(out: &Path, config: &TrainConfig, log: &RunLog) -> Result<PathBuf> {
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
    }
    let mut jsonl = std::fs::File::create(out).map_err(|e| CliError::io(out, e))?;
    let header = HeaderRecord {
        record: "header",
        version: env!("CARGO_PKG_VERSION"),
        config,
    };
    writeln!(
        jsonl,
        "{}",
        serde_json::to_string(&header).map_err(|e| CliError::Format(e.to_string()))?
    )
    .map_err(|e| CliError::io(out, e))?;
    for r in &log.records {
        let rec = EpochJson {
            record: "epoch",
            epoch: r.epoch,
            full_batch_train_loss: r.train_loss,
            val_accuracy: r.val_accuracy,
            elapsed_seconds: r.elapsed_seconds,
            diverged: r.diverged,
        };
        writeln!(
            jsonl,
            "{}",
            serde_json::to_string(&rec).map_err(|e| CliError::Format(e.to_string()))?
        )
        .map_err(|e| CliError::io(out, e))?;
    }
    let csv = csv_path(out);
    std::fs::write(&csv, csv_body(log)).map_err(|e| CliError::io(&csv, e))?;
    Ok(csv)
}
