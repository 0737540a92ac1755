//! Step-size stability sweeps: a grid of (oracle, tau) training runs sharing
//! one dataset, with final losses or divergence markers per cell.

use crate::config::{OracleSpec, TrainConfig};
use crate::error::Result;
use proxprop_core::{optim, Dataset, TrainSettings};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellResult {
    /// Final full-batch training loss.
    Loss(f64),
    Diverged,
}

impl std::fmt::Display for CellResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CellResult::Loss(v) => write!(f, "{v}"),
            CellResult::Diverged => write!(f, "DIVERGED"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub taus: Vec<f64>,
    pub rows: Vec<(OracleSpec, Vec<CellResult>)>,
}

impl SweepTable {
    pub fn cell(&self, oracle: OracleSpec, tau: f64) -> Option<CellResult> {
        let col = self.taus.iter().position(|&t| t == tau)?;
        self.rows
            .iter()
            .find(|(o, _)| *o == oracle)
            .map(|(_, cells)| cells[col])
    }

    /// Best (tau, loss) cell of a row, ignoring diverged cells.
    pub fn best_tau(&self, oracle: OracleSpec) -> Option<(f64, f64)> {
        let (_, cells) = self.rows.iter().find(|(o, _)| *o == oracle)?;
        let mut best: Option<(f64, f64)> = None;
        for (tau, cell) in self.taus.iter().zip(cells) {
            if let CellResult::Loss(v) = cell {
                if v.is_finite() && best.map_or(true, |(_, b)| *v < b) {
                    best = Some((*tau, *v));
                }
            }
        }
        best
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("oracle");
        for t in &self.taus {
            out.push_str(&format!(",{t}"));
        }
        out.push('\n');
        for (oracle, cells) in &self.rows {
            out.push_str(&oracle.to_string());
            for c in cells {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

fn run_cell(
    base: &TrainConfig,
    data: &Dataset,
    val: Option<&Dataset>,
    oracle: OracleSpec,
    tau: f64,
) -> CellResult {
    let attempt = || -> Result<CellResult> {
        let mut net = base.build_network(data)?;
        let settings = TrainSettings {
            optimizer: base.optimizer.to_kind(),
            lr: tau,
            batch_size: base.batch_size,
            epochs: base.epochs,
            seed: base.seed,
        };
        let log = optim::train(
            &mut net,
            data,
            val,
            &settings,
            &oracle.to_oracle(base.tau_theta),
        )?;
        let last = log.records.last().expect("log has the initial record");
        if log.diverged || !last.train_loss.is_finite() {
            Ok(CellResult::Diverged)
        } else {
            Ok(CellResult::Loss(last.train_loss))
        }
    };
    attempt().unwrap_or(CellResult::Diverged)
}

/// Runs every (oracle, tau) combination on the shared dataset, spreading
/// cells over `workers` threads. Each cell is internally single-threaded and
/// seeds its own network, so the table does not depend on scheduling.
pub fn stability_sweep(
    base: &TrainConfig,
    taus: &[f64],
    oracles: &[OracleSpec],
    workers: usize,
) -> Result<SweepTable> {
    let (data, val) = base.load_data()?;
    let cells: Vec<(usize, OracleSpec, f64)> = oracles
        .iter()
        .enumerate()
        .flat_map(|(i, &o)| {
            taus.iter()
                .enumerate()
                .map(move |(j, &t)| (i * taus.len() + j, o, t))
        })
        .collect();
    let results: Mutex<Vec<Option<CellResult>>> = Mutex::new(vec![None; cells.len()]);
    let next = AtomicUsize::new(0);
    let workers = workers.max(1).min(cells.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= cells.len() {
                    break;
                }
                let (slot, oracle, tau) = cells[k];
                let outcome = run_cell(base, &data, val.as_ref(), oracle, tau);
                results.lock().unwrap()[slot] = Some(outcome);
            });
        }
    });
    let flat = results.into_inner().unwrap();
    let rows = oracles
        .iter()
        .enumerate()
        .map(|(i, &o)| {
            let cells = (0..taus.len())
                .map(|j| flat[i * taus.len() + j].expect("all cells ran"))
                .collect();
            (o, cells)
        })
        .collect();
    Ok(SweepTable {
        taus: taus.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigArgs;

    fn quick_config() -> TrainConfig {
        let args = ConfigArgs {
            dataset: Some("blobs".into()),
            n: Some(60),
            classes: Some(2),
            arch: Some("2-8-2".into()),
            optimizer: Some("sgd".into()),
            batch_size: Some(20),
            epochs: Some(3),
            val_fraction: Some(0.0),
            ..Default::default()
        };
        args.resolve().unwrap()
    }

    #[test]
    fn single_cell_sweep_equals_a_plain_run() {
        let cfg = quick_config();
        let table = stability_sweep(&cfg, &[0.3], &[OracleSpec::Backprop], 1).unwrap();
        let cell = table.cell(OracleSpec::Backprop, 0.3).unwrap();

        let (data, val) = cfg.load_data().unwrap();
        let mut net = cfg.build_network(&data).unwrap();
        let settings = TrainSettings {
            optimizer: cfg.optimizer.to_kind(),
            lr: 0.3,
            batch_size: cfg.batch_size,
            epochs: cfg.epochs,
            seed: cfg.seed,
        };
        let log = optim::train(
            &mut net,
            &data,
            val.as_ref(),
            &settings,
            &proxprop_core::Oracle::Backprop,
        )
        .unwrap();
        match cell {
            CellResult::Loss(v) => {
                assert_eq!(v.to_bits(), log.records.last().unwrap().train_loss.to_bits())
            }
            CellResult::Diverged => panic!("unexpected divergence"),
        }
    }

    #[test]
    fn vanishing_tau_leaves_every_method_finite_near_initial_loss() {
        let cfg = quick_config();
        let table = stability_sweep(
            &cfg,
            &[1e-9],
            &[OracleSpec::Backprop, OracleSpec::ProxpropCg(2)],
            2,
        )
        .unwrap();
        let (data, _) = cfg.load_data().unwrap();
        let net = cfg.build_network(&data).unwrap();
        let initial = proxprop_core::optim::full_batch_loss(&net, &data, 64).unwrap();
        for (_, cells) in &table.rows {
            match cells[0] {
                CellResult::Loss(v) => assert!((v - initial).abs() <= 1e-3),
                CellResult::Diverged => panic!("vanishing step diverged"),
            }
        }
    }

    #[test]
    fn parallel_and_serial_sweeps_agree_bitwise() {
        let cfg = quick_config();
        let taus = [0.5, 0.05];
        let oracles = [OracleSpec::Backprop, OracleSpec::ProxpropCg(2)];
        let serial = stability_sweep(&cfg, &taus, &oracles, 1).unwrap();
        let parallel = stability_sweep(&cfg, &taus, &oracles, 4).unwrap();
        assert_eq!(serial.to_csv(), parallel.to_csv());
    }
}
