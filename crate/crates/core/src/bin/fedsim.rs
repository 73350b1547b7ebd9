use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedsim::cli::{self, CommonOptions};

#[derive(Parser)]
#[command(name = "fedsim", version, about = "FedAvg / FedProx federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "./out")]
    out: PathBuf,
    /// Suppress progress output on stderr.
    #[arg(long)]
    quiet: bool,
    /// Worker threads (1 = sequential, 0 = all cores). Outputs do not depend on it.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

impl From<Common> for CommonOptions {
    fn from(c: Common) -> Self {
        CommonOptions {
            config: c.config,
            out: c.out,
            quiet: c.quiet,
            threads: c.threads,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one federation and write rounds.csv, summary.json and labels.csv.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write train.txt, test.txt and partition.txt.
        #[arg(long)]
        export_data: bool,
    },
    /// Run every configured method and partition over several seeds and write table.csv.
    Suite {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds; overrides the config's `seeds`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Print per-client label histograms without training.
    InspectPartition {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model on the pooled data and report its test accuracy.
    Baseline {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Run {
            common,
            export_data,
        } => cli::cmd_run(&common.into(), export_data),
        Command::Suite { common, seeds } => cli::cmd_suite(&common.into(), seeds).map(|_| ()),
        Command::InspectPartition { common } => {
            cli::cmd_inspect_partition(&common.into(), &mut std::io::stdout().lock())
        }
        Command::Baseline { common } => {
            cli::cmd_baseline(&common.into(), &mut std::io::stdout().lock()).map(|_| ())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
