//! Experiment configuration.
//!
//! The on-disk format is one `key = value` pair per line. Blank lines and
//! lines starting with `#` are ignored; keys may appear at most once.
//!
//! ```text
//! method          = fedavg | fedprox
//! mu              = <real >= 0>            (default 0.2, FedProx only)
//! n_clients       = <int >= 1>             (default 10)
//! fraction        = <real in (0, 1]>       (default 0.5)
//! rounds          = <int >= 0>             (default 100)
//! local_epochs    = <int >= 1>             (default 2)
//! batch_size      = <int >= 1>             (default 64)
//! learning_rate   = <real > 0>             (default 0.01)
//! partition       = iid | shards(<k>)      (default iid)
//! dataset         = synthetic(<n_samples>, <n_classes>, <feature_dim>, <separation>)
//!                 | file(<path>)           (default synthetic(5000, 4, 16, 6))
//! test_fraction   = <real in (0, 1)>       (default 0.2)
//! data_seed       = <u64>                  (default 0)
//! seed            = <u64>                  (default 0)
//! seeds           = <u64>, <u64>, ...      (default 0, 1, 2)
//! weighting       = datasize | uniform     (default datasize)
//! baseline_epochs = <int >= 0>             (default round(rounds * local_epochs * fraction))
//! suite_methods   = <method>, ...          (default: method)
//! suite_partitions = <partition>, ...      (default: partition)
//! ```
//!
//! `seed` drives partitioning, client selection and local shuffles;
//! `data_seed` drives dataset generation and the test holdout.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::dataset::{
    allocate_shards, generate_synthetic, partition, ClientSplit, Dataset, PartitionMode, PartitionSpec,
};
use crate::error::{Error, Result};
use crate::federation::{selection_size, Weighting};
use crate::seeding::{self, Purpose};
use crate::textio;
use crate::trainer::{HyperParams, Objective};

pub const DEFAULT_MU: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic {
        n_samples: usize,
        n_classes: usize,
        feature_dim: usize,
        separation: f64,
    },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub method: Objective,
    /// `None` means the FedProx default of 0.2.
    pub mu: Option<f64>,
    pub n_clients: usize,
    pub fraction: f64,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub partition: PartitionMode,
    pub dataset: DatasetSource,
    pub test_fraction: f64,
    pub data_seed: u64,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub weighting: Weighting,
    pub baseline_epochs: Option<usize>,
    /// Empty means `[method]`.
    pub suite_methods: Vec<Objective>,
    /// Empty means `[partition]`.
    pub suite_partitions: Vec<PartitionMode>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Objective::FedAvg,
            mu: None,
            n_clients: 10,
            fraction: 0.5,
            rounds: 100,
            local_epochs: 2,
            batch_size: 64,
            learning_rate: 0.01,
            partition: PartitionMode::Iid,
            dataset: DatasetSource::Synthetic {
                n_samples: 5000,
                n_classes: 4,
                feature_dim: 16,
                separation: 6.0,
            },
            test_fraction: 0.2,
            data_seed: 0,
            seed: 0,
            seeds: vec![0, 1, 2],
            weighting: Weighting::DataSize,
            baseline_epochs: None,
            suite_methods: Vec::new(),
            suite_partitions: Vec::new(),
        }
    }
}

/// Training and test data plus the client partition for one run.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub splits: Vec<ClientSplit>,
}

const KEYS: &[&str] = &[
    "method",
    "mu",
    "n_clients",
    "fraction",
    "rounds",
    "local_epochs",
    "batch_size",
    "learning_rate",
    "partition",
    "dataset",
    "test_fraction",
    "data_seed",
    "seed",
    "seeds",
    "weighting",
    "baseline_epochs",
    "suite_methods",
    "suite_partitions",
];

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::config(key, format!("expected a non-negative integer, got `{v}`")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse()
        .map_err(|_| Error::config(key, format!("expected an unsigned 64-bit integer, got `{v}`")))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(Error::config(key, format!("expected a finite real number, got `{v}`"))),
    }
}

pub fn parse_method(key: &str, v: &str) -> Result<Objective> {
    match v.to_ascii_lowercase().as_str() {
        "fedavg" => Ok(Objective::FedAvg),
        "fedprox" => Ok(Objective::FedProx),
        _ => Err(Error::config(key, format!("expected `fedavg` or `fedprox`, got `{v}`"))),
    }
}

pub fn parse_partition(key: &str, v: &str) -> Result<PartitionMode> {
    let lower = v.to_ascii_lowercase();
    if lower == "iid" {
        return Ok(PartitionMode::Iid);
    }
    let inner = call_args(&lower, "shards")
        .ok_or_else(|| Error::config(key, format!("expected `iid` or `shards(k)`, got `{v}`")))?;
    let k = parse_usize(key, inner.trim())?;
    if k == 0 {
        return Err(Error::config(key, "shards per client must be at least 1"));
    }
    Ok(PartitionMode::Shards(k))
}

/// `name(args)` -> `args`.
fn call_args<'a>(v: &'a str, name: &str) -> Option<&'a str> {
    v.strip_prefix(name)?
        .trim_start()
        .strip_prefix('(')?
        .strip_suffix(')')
}

fn parse_dataset(key: &str, v: &str) -> Result<DatasetSource> {
    if let Some(path) = call_args(v, "file") {
        let path = path.trim();
        if path.is_empty() {
            return Err(Error::config(key, "file() needs a path"));
        }
        return Ok(DatasetSource::File(PathBuf::from(path)));
    }
    let args = call_args(v, "synthetic").ok_or_else(|| {
        Error::config(
            key,
            format!("expected `synthetic(n_samples, n_classes, feature_dim, separation)` or `file(path)`, got `{v}`"),
        )
    })?;
    let parts: Vec<&str> = args.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(Error::config(key, "synthetic() takes 4 arguments"));
    }
    Ok(DatasetSource::Synthetic {
        n_samples: parse_usize(key, parts[0])?,
        n_classes: parse_usize(key, parts[1])?,
        feature_dim: parse_usize(key, parts[2])?,
        separation: parse_f64(key, parts[3])?,
    })
}

fn parse_list<T>(key: &str, v: &str, item: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| item(key, s))
        .collect()
}

pub fn method_name(m: Objective) -> &'static str {
    match m {
        Objective::FedAvg => "fedavg",
        Objective::FedProx => "fedprox",
    }
}

pub fn partition_name(p: PartitionMode) -> String {
    match p {
        PartitionMode::Iid => "iid".into(),
        PartitionMode::Shards(k) => format!("shards({k})"),
    }
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    /// Parses and validates a config text. Keys not present take their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<&str> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let canonical = KEYS
                .iter()
                .find(|k| **k == key)
                .ok_or_else(|| Error::config(key, "unknown key"))?;
            if seen.contains(canonical) {
                return Err(Error::config(key, "given more than once"));
            }
            seen.push(canonical);
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "method" => self.method = parse_method(key, v)?,
            "mu" => self.mu = Some(parse_f64(key, v)?),
            "n_clients" => self.n_clients = parse_usize(key, v)?,
            "fraction" => self.fraction = parse_f64(key, v)?,
            "rounds" => self.rounds = parse_usize(key, v)?,
            "local_epochs" => self.local_epochs = parse_usize(key, v)?,
            "batch_size" => self.batch_size = parse_usize(key, v)?,
            "learning_rate" => self.learning_rate = parse_f64(key, v)?,
            "partition" => self.partition = parse_partition(key, v)?,
            "dataset" => self.dataset = parse_dataset(key, v)?,
            "test_fraction" => self.test_fraction = parse_f64(key, v)?,
            "data_seed" => self.data_seed = parse_u64(key, v)?,
            "seed" => self.seed = parse_u64(key, v)?,
            "seeds" => self.seeds = parse_list(key, v, parse_u64)?,
            "weighting" => {
                self.weighting = match v.to_ascii_lowercase().as_str() {
                    "datasize" => Weighting::DataSize,
                    "uniform" => Weighting::Uniform,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected `datasize` or `uniform`, got `{v}`"),
                        ))
                    }
                }
            }
            "baseline_epochs" => self.baseline_epochs = Some(parse_usize(key, v)?),
            "suite_methods" => self.suite_methods = parse_list(key, v, parse_method)?,
            "suite_partitions" => self.suite_partitions = parse_list(key, v, parse_partition)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Canonical text form; [`ExperimentConfig::parse`] inverts it.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        put("method", method_name(self.method).into());
        if let Some(mu) = self.mu {
            put("mu", format!("{mu:?}"));
        }
        put("n_clients", self.n_clients.to_string());
        put("fraction", format!("{:?}", self.fraction));
        put("rounds", self.rounds.to_string());
        put("local_epochs", self.local_epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("learning_rate", format!("{:?}", self.learning_rate));
        put("partition", partition_name(self.partition));
        put(
            "dataset",
            match &self.dataset {
                DatasetSource::Synthetic {
                    n_samples,
                    n_classes,
                    feature_dim,
                    separation,
                } => format!("synthetic({n_samples}, {n_classes}, {feature_dim}, {separation:?})"),
                DatasetSource::File(p) => format!("file({})", p.display()),
            },
        );
        put("test_fraction", format!("{:?}", self.test_fraction));
        put("data_seed", self.data_seed.to_string());
        put("seed", self.seed.to_string());
        put("seeds", join(&self.seeds, u64::to_string));
        put(
            "weighting",
            match self.weighting {
                Weighting::DataSize => "datasize".into(),
                Weighting::Uniform => "uniform".into(),
            },
        );
        if let Some(e) = self.baseline_epochs {
            put("baseline_epochs", e.to_string());
        }
        if !self.suite_methods.is_empty() {
            put("suite_methods", join(&self.suite_methods, |m| method_name(*m).into()));
        }
        if !self.suite_partitions.is_empty() {
            put("suite_partitions", join(&self.suite_partitions, |p| partition_name(*p)));
        }
        out
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    /// Non-fatal remarks about the configuration.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.method == Objective::FedAvg && self.mu.is_some() && self.suite_methods.is_empty() {
            w.push("mu is ignored for method fedavg".to_string());
        }
        w
    }

    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            local_epochs: self.local_epochs,
            mu: self.mu.unwrap_or(DEFAULT_MU),
            objective: self.method,
        }
    }

    /// Epoch budget for the centralized baseline. By default it sees as many
    /// samples as the federation does in expectation.
    pub fn baseline_epochs(&self) -> usize {
        self.baseline_epochs.unwrap_or_else(|| {
            (self.rounds as f64 * self.local_epochs as f64 * self.fraction).round() as usize
        })
    }

    pub fn suite_methods(&self) -> Vec<Objective> {
        if self.suite_methods.is_empty() {
            vec![self.method]
        } else {
            self.suite_methods.clone()
        }
    }

    pub fn suite_partitions(&self) -> Vec<PartitionMode> {
        if self.suite_partitions.is_empty() {
            vec![self.partition]
        } else {
            self.suite_partitions.clone()
        }
    }

    fn holdout_sizes(&self, n_samples: usize) -> (usize, usize) {
        let n_test = (n_samples as f64 * self.test_fraction).round() as usize;
        (n_samples - n_test, n_test)
    }

    /// Checks every range and, for synthetic data, partition feasibility.
    pub fn validate(&self) -> Result<()> {
        if let Some(mu) = self.mu {
            if mu < 0.0 {
                return Err(Error::config("mu", format!("must be >= 0, got {mu}")));
            }
        }
        if self.n_clients == 0 {
            return Err(Error::config("n_clients", "must be at least 1"));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::config(
                "fraction",
                format!("must lie in (0, 1], got {}", self.fraction),
            ));
        }
        selection_size(self.n_clients, self.fraction)
            .map_err(|e| Error::config("fraction", e.to_string()))?;
        if self.local_epochs == 0 {
            return Err(Error::config("local_epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config(
                "learning_rate",
                format!("must be > 0, got {}", self.learning_rate),
            ));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config(
                "test_fraction",
                format!("must lie in (0, 1), got {}", self.test_fraction),
            ));
        }
        crate::evaluation::check_seeds(&self.seeds).map_err(|e| Error::config("seeds", e.to_string()))?;

        if let DatasetSource::Synthetic {
            n_samples,
            n_classes,
            feature_dim,
            separation,
        } = self.dataset
        {
            if n_classes < 2 {
                return Err(Error::config("dataset", "n_classes must be at least 2"));
            }
            if feature_dim < n_classes {
                return Err(Error::config("dataset", "feature_dim must be at least n_classes"));
            }
            if !(separation > 0.0) {
                return Err(Error::config("dataset", "separation must be > 0"));
            }
            let (n_train, n_test) = self.holdout_sizes(n_samples);
            if n_train < n_classes || n_test < n_classes {
                return Err(Error::config(
                    "dataset",
                    format!(
                        "{n_samples} samples split into {n_train} train / {n_test} test cannot cover {n_classes} classes in both"
                    ),
                ));
            }
            let counts: Vec<usize> = (0..n_classes)
                .map(|c| n_train / n_classes + usize::from(c < n_train % n_classes))
                .collect();
            for mode in self.partitions_in_use() {
                self.check_partition_feasible(mode, &counts)?;
            }
        }
        Ok(())
    }

    fn partitions_in_use(&self) -> Vec<PartitionMode> {
        let mut modes = vec![self.partition];
        modes.extend(self.suite_partitions.iter().copied());
        modes
    }

    fn check_partition_feasible(&self, mode: PartitionMode, class_counts: &[usize]) -> Result<()> {
        let n_train: usize = class_counts.iter().sum();
        let key = "partition";
        match mode {
            PartitionMode::Iid => {
                if self.n_clients > n_train {
                    return Err(Error::config(
                        key,
                        format!("{} clients exceed {n_train} training samples", self.n_clients),
                    ));
                }
            }
            PartitionMode::Shards(k) => {
                let n_shards = self.n_clients * k;
                if n_shards > n_train {
                    return Err(Error::config(
                        key,
                        format!(
                            "shards({k}) is infeasible: {} clients x {k} = {n_shards} shards > {n_train} training samples",
                            self.n_clients
                        ),
                    ));
                }
                allocate_shards(class_counts, n_shards)
                    .map_err(|e| Error::config(key, format!("shards({k}) is infeasible: {e}")))?;
            }
        }
        Ok(())
    }

    /// Builds the training and test sets and partitions the training set.
    pub fn prepare(&self) -> Result<PreparedData> {
        let (train, test) = match &self.dataset {
            DatasetSource::Synthetic {
                n_samples,
                n_classes,
                feature_dim,
                separation,
            } => {
                let (n_train, n_test) = self.holdout_sizes(*n_samples);
                let gen = |n, purpose| {
                    generate_synthetic(
                        n,
                        *n_classes,
                        *feature_dim,
                        *separation,
                        seeding::derive_seed(self.data_seed, purpose, &[]),
                    )
                };
                (gen(n_train, Purpose::TrainData)?, gen(n_test, Purpose::TestData)?)
            }
            DatasetSource::File(path) => {
                let full = textio::parse_dataset(&textio::read_to_string(path)?)?;
                let (_, n_test) = self.holdout_sizes(full.len());
                let mut order: Vec<usize> = (0..full.len()).collect();
                order.shuffle(&mut seeding::stream(self.data_seed, Purpose::Holdout, &[]));
                let (test_idx, train_idx) = order.split_at_mut(n_test);
                test_idx.sort_unstable();
                train_idx.sort_unstable();
                let train = full
                    .select(train_idx)
                    .map_err(|e| Error::config("dataset", format!("training holdout: {e}")))?;
                let test = full
                    .select(test_idx)
                    .map_err(|e| Error::config("dataset", format!("test holdout: {e}")))?;
                for mode in self.partitions_in_use() {
                    self.check_partition_feasible(mode, &train.class_counts())?;
                }
                (train, test)
            }
        };
        let spec = PartitionSpec {
            mode: self.partition,
            n_clients: self.n_clients,
            seed: self.seed,
        };
        let splits = partition(&train, &spec).map_err(|e| Error::config("partition", e.to_string()))?;
        Ok(PreparedData { train, test, splits })
    }
}
