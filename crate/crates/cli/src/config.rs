//! Run configuration: datasets, architectures, oracles, optimizers.
//!
//! Values resolve in order: command-line flag, then config-file assignment
//! (`key = value`, one per line, `#` comments), then default. The resolved
//! configuration is echoed into every run log header and is sufficient to
//! reproduce the run bit-identically.

use crate::arch::build_network;
use crate::data;
use crate::error::{CliError, Result};
use proxprop_core::{Dataset, Network, OptimKind, Oracle, ProxConfig, ProxMode};
use serde::Serialize;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

/// Environment variable consulted when `--data-dir` is not given.
pub const DATA_DIR_ENV: &str = "PROXPROP_DATA_DIR";

#[derive(Debug, Clone, Serialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Cifar10 { dir: PathBuf, subset: usize },
    Csv { path: PathBuf },
    Blobs { n: usize, classes: usize, seed: u64 },
    Moons { n: usize, noise: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleSpec {
    Backprop,
    ProxpropExact,
    ProxpropCg(usize),
}

impl OracleSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.trim().to_lowercase().replace('-', "_");
        if norm == "backprop" {
            return Ok(OracleSpec::Backprop);
        }
        if norm == "proxprop_exact" {
            return Ok(OracleSpec::ProxpropExact);
        }
        if let Some(k) = norm.strip_prefix("proxprop_cg") {
            let k = k.trim_matches(['(', ')']);
            let k: usize = k
                .parse()
                .map_err(|_| CliError::Config(format!("bad cg iteration count in '{s}'")))?;
            if k == 0 {
                return Err(CliError::Config("cg iteration count must be positive".into()));
            }
            return Ok(OracleSpec::ProxpropCg(k));
        }
        Err(CliError::Config(format!(
            "unknown oracle '{s}' (use backprop, proxprop_exact, or proxprop_cgK)"
        )))
    }

    pub fn to_oracle(self, tau_theta: f64) -> Oracle {
        match self {
            OracleSpec::Backprop => Oracle::Backprop,
            OracleSpec::ProxpropExact => Oracle::ProxProp(ProxConfig {
                tau_theta,
                mode: ProxMode::Exact,
                cg_tol: 1e-10,
            }),
            OracleSpec::ProxpropCg(k) => Oracle::ProxProp(ProxConfig {
                tau_theta,
                mode: ProxMode::Cg(k),
                cg_tol: 1e-10,
            }),
        }
    }
}

impl std::fmt::Display for OracleSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OracleSpec::Backprop => write!(f, "backprop"),
            OracleSpec::ProxpropExact => write!(f, "proxprop_exact"),
            OracleSpec::ProxpropCg(k) => write!(f, "proxprop_cg{k}"),
        }
    }
}

impl Serialize for OracleSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerSpec {
    Sgd,
    Nesterov { mu: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerSpec {
    pub fn to_kind(self) -> OptimKind {
        match self {
            OptimizerSpec::Sgd => OptimKind::Sgd,
            OptimizerSpec::Nesterov { mu } => OptimKind::Nesterov { mu },
            OptimizerSpec::Adam { beta1, beta2, eps } => OptimKind::Adam { beta1, beta2, eps },
        }
    }
}

/// Fully resolved training configuration, echoed into log headers.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TrainConfig {
    pub dataset: DatasetSpec,
    pub arch: String,
    pub oracle: OracleSpec,
    /// Outer learning rate.
    pub tau: f64,
    /// Proximal step size for implicit layers.
    pub tau_theta: f64,
    pub optimizer: OptimizerSpec,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Trailing fraction of the training data held out for validation.
    pub val_fraction: f64,
    pub conv_bias: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(CliError::Config(format!("tau {} must be positive", self.tau)));
        }
        if !(self.tau_theta > 0.0) {
            return Err(CliError::Config(format!(
                "tau_theta {} must be positive",
                self.tau_theta
            )));
        }
        if self.batch_size == 0 {
            return Err(CliError::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(CliError::Config(format!(
                "val_fraction {} outside [0, 1)",
                self.val_fraction
            )));
        }
        if let OptimizerSpec::Nesterov { mu } = self.optimizer {
            if !(0.0..1.0).contains(&mu) {
                return Err(CliError::Config(format!("mu {mu} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// Loads the dataset and splits off the validation tail.
    pub fn load_data(&self) -> Result<(Dataset, Option<Dataset>)> {
        let full = match &self.dataset {
            DatasetSpec::Cifar10 { dir, subset } => data::load_cifar10(dir, *subset)?,
            DatasetSpec::Csv { path } => data::load_csv(path)?,
            DatasetSpec::Blobs { n, classes, seed } => data::synth_blobs(*n, *classes, *seed)?,
            DatasetSpec::Moons { n, noise, seed } => data::synth_moons(*n, *noise, *seed)?,
        };
        if self.val_fraction == 0.0 {
            return Ok((full, None));
        }
        let (train, val) = full.split_tail(self.val_fraction)?;
        Ok((train, Some(val)))
    }

    pub fn num_classes(&self) -> usize {
        match &self.dataset {
            DatasetSpec::Cifar10 { .. } => data::CIFAR_CLASSES,
            DatasetSpec::Csv { .. } => 0, // inferred from the file
            DatasetSpec::Blobs { classes, .. } => *classes,
            DatasetSpec::Moons { .. } => 2,
        }
    }

    /// Builds the network for this configuration against the loaded data.
    pub fn build_network(&self, train: &Dataset) -> Result<Network> {
        let classes = match self.num_classes() {
            0 => train.labels.iter().copied().max().unwrap_or(0) + 1,
            k => k,
        };
        build_network(
            &self.arch,
            train.feature_dim(),
            train.image_shape,
            classes,
            self.conv_bias,
            self.seed,
        )
    }

    pub fn oracle(&self) -> Oracle {
        self.oracle.to_oracle(self.tau_theta)
    }
}

/// Raw option bag shared by the `train`, `sweep`, and `probe-conditioning`
/// commands; every field mirrors a config-file key of the same name.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ConfigArgs {
    /// Config file, one `key = value` per line; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset kind: cifar10 | csv | blobs | moons
    #[arg(long)]
    pub dataset: Option<String>,
    /// Directory with CIFAR-10 .bin batch files (or set PROXPROP_DATA_DIR)
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Number of leading records to load from the batch files
    #[arg(long)]
    pub subset: Option<usize>,
    /// CSV file for the csv dataset
    #[arg(long)]
    pub csv_path: Option<PathBuf>,
    /// Sample count for synthetic datasets
    #[arg(long)]
    pub n: Option<usize>,
    /// Class count for blobs
    #[arg(long)]
    pub classes: Option<usize>,
    /// Noise level for moons
    #[arg(long)]
    pub noise: Option<f64>,
    /// Seed for synthetic dataset generation
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Architecture string, e.g. 3072-500-120-500-10 or a bracketed conv stack
    #[arg(long)]
    pub arch: Option<String>,
    /// backprop | proxprop_exact | proxprop_cgK
    #[arg(long)]
    pub oracle: Option<String>,
    /// Outer learning rate
    #[arg(long)]
    pub tau: Option<f64>,
    /// Proximal step size
    #[arg(long)]
    pub tau_theta: Option<f64>,
    /// sgd | nesterov | adam
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Nesterov momentum
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trailing fraction held out for validation
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Build conv layers without bias terms
    #[arg(long)]
    pub no_conv_bias: bool,
}

fn parse_file(path: &Path) -> Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut map = HashMap::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("{}:{}: expected key = value", path.display(), ln + 1))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn file_get<T: std::str::FromStr>(map: &HashMap<String, String>, key: &str) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("bad value '{raw}' for {key}"))),
    }
}

impl ConfigArgs {
    /// Resolves flags, config file, environment, and defaults into a
    /// concrete `TrainConfig`.
    pub fn resolve(&self) -> Result<TrainConfig> {
        let file = match &self.config {
            Some(path) => parse_file(path)?,
            None => HashMap::new(),
        };
        macro_rules! pick {
            ($flag:expr, $key:literal, $default:expr) => {
                match &$flag {
                    Some(v) => v.clone(),
                    None => file_get(&file, $key)?.unwrap_or($default),
                }
            };
        }
        let dataset_kind: String = pick!(self.dataset, "dataset", "blobs".to_string());
        let data_seed: u64 = pick!(self.data_seed, "data_seed", 0);
        let dataset = match dataset_kind.as_str() {
            "cifar10" => {
                let dir = match &self.data_dir {
                    Some(d) => d.clone(),
                    None => match file.get("data_dir") {
                        Some(d) => PathBuf::from(d),
                        None => std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).ok_or_else(
                            || {
                                CliError::Config(format!(
                                    "cifar10 needs --data-dir or {DATA_DIR_ENV}"
                                ))
                            },
                        )?,
                    },
                };
                DatasetSpec::Cifar10 {
                    dir,
                    subset: pick!(self.subset, "subset", 5000),
                }
            }
            "csv" => {
                let path = match &self.csv_path {
                    Some(p) => p.clone(),
                    None => file
                        .get("csv_path")
                        .map(PathBuf::from)
                        .ok_or_else(|| CliError::Config("csv dataset needs --csv-path".into()))?,
                };
                DatasetSpec::Csv { path }
            }
            "blobs" => DatasetSpec::Blobs {
                n: pick!(self.n, "n", 200),
                classes: pick!(self.classes, "classes", 3),
                seed: data_seed,
            },
            "moons" => DatasetSpec::Moons {
                n: pick!(self.n, "n", 200),
                noise: pick!(self.noise, "noise", 0.1),
                seed: data_seed,
            },
            other => {
                return Err(CliError::Config(format!(
                    "unknown dataset '{other}' (cifar10, csv, blobs, moons)"
                )))
            }
        };
        let optimizer_kind: String = pick!(self.optimizer, "optimizer", "nesterov".to_string());
        let optimizer = match optimizer_kind.as_str() {
            "sgd" => OptimizerSpec::Sgd,
            "nesterov" => OptimizerSpec::Nesterov {
                mu: pick!(self.mu, "mu", 0.95),
            },
            "adam" => OptimizerSpec::Adam {
                beta1: pick!(self.beta1, "beta1", 0.9),
                beta2: pick!(self.beta2, "beta2", 0.999),
                eps: pick!(self.eps, "eps", 1e-8),
            },
            other => {
                return Err(CliError::Config(format!(
                    "unknown optimizer '{other}' (sgd, nesterov, adam)"
                )))
            }
        };
        let oracle_str: String = pick!(self.oracle, "oracle", "proxprop_cg3".to_string());
        let oracle = OracleSpec::parse(&oracle_str)?;
        let default_tau_theta = match oracle {
            OracleSpec::ProxpropExact => 0.05,
            _ => 1.0,
        };
        let arch: String = match &self.arch {
            Some(a) => a.clone(),
            None => match file.get("arch") {
                Some(a) => a.clone(),
                None => default_arch(&dataset),
            },
        };
        let config = TrainConfig {
            dataset,
            arch,
            oracle,
            tau: pick!(self.tau, "tau", 0.1),
            tau_theta: pick!(self.tau_theta, "tau_theta", default_tau_theta),
            optimizer,
            batch_size: pick!(self.batch_size, "batch_size", 50),
            epochs: pick!(self.epochs, "epochs", 10),
            seed: pick!(self.seed, "seed", 0),
            val_fraction: pick!(self.val_fraction, "val_fraction", 0.1),
            conv_bias: if self.no_conv_bias {
                false
            } else {
                file_get(&file, "conv_bias")?.unwrap_or(true)
            },
        };
        config.validate()?;
        Ok(config)
    }
}

fn default_arch(dataset: &DatasetSpec) -> String {
    match dataset {
        DatasetSpec::Cifar10 { .. } => "3072-500-120-500-10".to_string(),
        DatasetSpec::Blobs { classes, .. } => format!("2-32-{classes}"),
        DatasetSpec::Moons { .. } => "2-32-2".to_string(),
        DatasetSpec::Csv { .. } => String::new(), // must be given explicitly
    }
}
