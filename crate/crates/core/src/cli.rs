//! Command implementations behind the `fedsim` binary.
//!
//! Every command reads an [`ExperimentConfig`] file, computes, and only then
//! writes its outputs. Progress goes to stderr; data files never carry logs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use crate::config::{partition_name, ExperimentConfig, PreparedData};
use crate::dataset::{distinct_labels, label_distribution, PartitionMode};
use crate::error::{Error, Result};
use crate::evaluation::{centralized_baseline, check_seeds, ExperimentSummary};
use crate::federation::{run_federation_with, FederationOutcome, RoundReport, Schedule};
use crate::textio::{self, fmt_f64};
use crate::trainer::Objective;

/// Options shared by every command.
#[derive(Debug, Clone)]
pub struct CommonOptions {
    pub config: PathBuf,
    pub out: PathBuf,
    pub quiet: bool,
    /// Worker threads for client training; 1 runs sequentially, 0 uses every core.
    pub threads: usize,
}

impl CommonOptions {
    fn schedule(&self) -> Schedule {
        if self.threads == 1 {
            Schedule::Sequential
        } else {
            Schedule::Parallel {
                threads: self.threads,
            }
        }
    }

    fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::parse(&textio::read_to_string(path)?)
}

fn load_and_warn(opts: &CommonOptions) -> Result<ExperimentConfig> {
    let cfg = load_config(&opts.config)?;
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn rounds_csv(history: &[RoundReport]) -> String {
    let mut out = String::from("round_index,selected_client_ids,mean_client_loss,test_accuracy\n");
    for r in history {
        let ids: Vec<String> = r.selected_client_ids.iter().map(usize::to_string).collect();
        writeln!(
            out,
            "{},{},{},{}",
            r.round_index,
            ids.join(";"),
            fmt_f64(r.mean_client_loss()),
            fmt_f64(r.test_accuracy)
        )
        .unwrap();
    }
    out
}

pub fn labels_csv(data: &PreparedData) -> Result<String> {
    let hist = data
        .splits
        .iter()
        .map(|s| Ok((s.client_id, label_distribution(&data.train, s)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(textio::write_label_csv(data.train.n_classes(), &hist))
}

fn config_echo(cfg: &ExperimentConfig) -> BTreeMap<String, String> {
    cfg.to_text()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn summary_json(cfg: &ExperimentConfig, final_accuracy: f64, rounds: usize) -> String {
    let value = json!({
        "final_accuracy": final_accuracy,
        "rounds_completed": rounds,
        "config_fingerprint": cfg.fingerprint(),
        "config": config_echo(cfg),
    });
    let mut s = serde_json::to_string_pretty(&value).expect("summary serializes");
    s.push('\n');
    s
}

/// Runs one federation and writes its three output files into `dir`.
fn run_into(cfg: &ExperimentConfig, dir: &Path, opts: &CommonOptions, schedule: Schedule) -> Result<f64> {
    let data = cfg.prepare()?;
    let total = cfg.rounds;
    let outcome: FederationOutcome = run_federation_with(cfg, schedule, |r| {
        if !opts.quiet && (r.round_index % 10 == 0 || r.round_index as usize == total) {
            eprintln!(
                "[seed {}] round {}/{} accuracy {:.4}",
                cfg.seed, r.round_index, total, r.test_accuracy
            );
        }
    })?;
    let final_accuracy = outcome.final_accuracy(&data.test)?;
    let rounds = rounds_csv(&outcome.history);
    let summary = summary_json(cfg, final_accuracy, outcome.history.len());
    let labels = labels_csv(&data)?;

    create_dir(dir)?;
    textio::write_atomic(&dir.join("rounds.csv"), &rounds)?;
    textio::write_atomic(&dir.join("summary.json"), &summary)?;
    textio::write_atomic(&dir.join("labels.csv"), &labels)?;
    Ok(final_accuracy)
}

/// `run`: one federation with the config's seed.
pub fn cmd_run(opts: &CommonOptions, export_data: bool) -> Result<()> {
    let cfg = load_and_warn(opts)?;
    let acc = run_into(&cfg, &opts.out, opts, opts.schedule())?;
    if export_data {
        let data = cfg.prepare()?;
        textio::write_atomic(&opts.out.join("train.txt"), &textio::write_dataset(&data.train))?;
        textio::write_atomic(&opts.out.join("test.txt"), &textio::write_dataset(&data.test))?;
        textio::write_atomic(&opts.out.join("partition.txt"), &textio::write_partition(&data.splits))?;
    }
    opts.log(format!("final accuracy {acc:.4}; outputs in {}", opts.out.display()));
    Ok(())
}

/// Method label in the layout of a results table.
pub fn method_label(cfg: &ExperimentConfig) -> String {
    match cfg.method {
        Objective::FedAvg => "FedAvg".into(),
        Objective::FedProx => format!("FedProx(mu={})", cfg.hyper_params().mu),
    }
}

pub fn partition_label(p: PartitionMode) -> String {
    match p {
        PartitionMode::Iid => "IID".into(),
        PartitionMode::Shards(k) => format!("{k}SPC"),
    }
}

fn dir_name(cfg: &ExperimentConfig) -> String {
    let part = match cfg.partition {
        PartitionMode::Iid => "iid".to_string(),
        PartitionMode::Shards(k) => format!("shards{k}"),
    };
    format!("{}_{part}", crate::config::method_name(cfg.method))
}

/// One row of `table.csv`.
#[derive(Debug, Clone)]
pub struct SuiteRow {
    pub method: String,
    pub partition: String,
    pub summary: ExperimentSummary,
}

pub fn table_csv(rows: &[SuiteRow]) -> String {
    let mut out = String::from("method,partition,mean_accuracy,std\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.method,
            r.partition,
            fmt_f64(r.summary.mean),
            fmt_f64(r.summary.std)
        )
        .unwrap();
    }
    out
}

/// `suite`: every (method, partition) pair of the config over every seed.
///
/// `seeds` overrides the config's `seeds` list.
pub fn cmd_suite(opts: &CommonOptions, seeds: Option<Vec<u64>>) -> Result<Vec<SuiteRow>> {
    let base = load_and_warn(opts)?;
    let seeds = seeds.unwrap_or_else(|| base.seeds.clone());
    check_seeds(&seeds).map_err(|e| Error::config("seeds", e.to_string()))?;

    let mut combos = Vec::new();
    for method in base.suite_methods() {
        for partition in base.suite_partitions() {
            combos.push(ExperimentConfig {
                method,
                partition,
                ..base.clone()
            });
        }
    }
    for c in &combos {
        c.validate()?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| Error::domain(format!("cannot build thread pool: {e}")))?;
    let mut rows = Vec::with_capacity(combos.len());
    for combo in &combos {
        let group = opts.out.join(dir_name(combo));
        opts.log(format!(
            "{} / {} over {} seeds",
            method_label(combo),
            partition_name(combo.partition),
            seeds.len()
        ));
        let accuracies: Vec<f64> = pool.install(|| {
            seeds
                .par_iter()
                .map(|&seed| {
                    let cfg = ExperimentConfig {
                        seed,
                        ..combo.clone()
                    };
                    run_into(&cfg, &group.join(format!("seed_{seed}")), opts, Schedule::Sequential)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        rows.push(SuiteRow {
            method: method_label(combo),
            partition: partition_label(combo.partition),
            summary: ExperimentSummary::from_accuracies(seeds.clone(), accuracies, combo.fingerprint()),
        });
    }

    let records: Vec<_> = rows
        .iter()
        .map(|r| json!({ "method": r.method, "partition": r.partition, "summary": r.summary }))
        .collect();
    let mut suite_json = serde_json::to_string_pretty(&records).expect("suite serializes");
    suite_json.push('\n');
    create_dir(&opts.out)?;
    textio::write_atomic(&opts.out.join("table.csv"), &table_csv(&rows))?;
    textio::write_atomic(&opts.out.join("suite.json"), &suite_json)?;
    Ok(rows)
}

/// Per-client histograms and distinct-label counts, as printed by `inspect-partition`.
pub fn partition_report(cfg: &ExperimentConfig) -> Result<String> {
    let data = cfg.prepare()?;
    let n_classes = data.train.n_classes();
    let mut out = String::from("client_id");
    for c in 0..n_classes {
        write!(out, ",class_{c}").unwrap();
    }
    out.push_str(",distinct_labels\n");
    for s in &data.splits {
        let counts = label_distribution(&data.train, s)?;
        write!(out, "{}", s.client_id).unwrap();
        for c in &counts {
            write!(out, ",{c}").unwrap();
        }
        writeln!(out, ",{}", distinct_labels(&counts)).unwrap();
    }
    Ok(out)
}

/// `inspect-partition`: prints the partition without training.
pub fn cmd_inspect_partition(opts: &CommonOptions, stdout: &mut dyn Write) -> Result<()> {
    let cfg = load_and_warn(opts)?;
    let report = partition_report(&cfg)?;
    stdout
        .write_all(report.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

/// `baseline`: centralized training on the pooled training set.
pub fn cmd_baseline(opts: &CommonOptions, stdout: &mut dyn Write) -> Result<f64> {
    let cfg = load_and_warn(opts)?;
    let data = cfg.prepare()?;
    let epochs = cfg.baseline_epochs();
    opts.log(format!("centralized training for {epochs} epochs"));
    let acc = centralized_baseline(&data.train, &data.test, &cfg.hyper_params(), epochs, cfg.seed)?;
    let value = json!({
        "accuracy": acc,
        "epochs": epochs,
        "config_fingerprint": cfg.fingerprint(),
        "config": config_echo(&cfg),
    });
    let mut text = serde_json::to_string_pretty(&value).expect("baseline serializes");
    text.push('\n');
    create_dir(&opts.out)?;
    textio::write_atomic(&opts.out.join("baseline.json"), &text)?;
    writeln!(stdout, "{}", fmt_f64(acc)).map_err(|e| Error::io("<stdout>", e))?;
    Ok(acc)
}
