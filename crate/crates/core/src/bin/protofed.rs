use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use protofed::config::ExperimentConfig;
use protofed::harness;

#[derive(Parser)]
#[command(name = "protofed", version, about = "Federated prototype-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Dot-path override, e.g. `--set loss.tau=0.1` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (PROTOFED_OUT takes precedence).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Client worker threads; defaults to the number of clients.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write metrics, convergence report, result and pool.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train once per K and seed and write ksweep.csv.
    SweepK {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
        k: Vec<usize>,
        /// Number of seeds, counting up from the config's master seed.
        #[arg(long, default_value_t = 3)]
        trials: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Write per-client label histograms without training.
    PartitionReport {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run every config in a directory and write comparison.csv.
    Compare {
        config_dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn load(path: &Path, common: &Common) -> protofed::Result<ExperimentConfig> {
    ExperimentConfig::load(path, &common.set)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, common } => load(config, common).and_then(|cfg| {
            let out = harness::output_dir(&common.out);
            let r = harness::cmd_run(&cfg, &out, common.workers)?;
            println!("mean accuracy {:.4} (std {:.4}) -> {}", r.mean_acc, r.std_acc, out.display());
            Ok(())
        }),
        Command::SweepK { config, k, trials, common } => load(config, common).and_then(|cfg| {
            let out = harness::output_dir(&common.out);
            let seeds = harness::trial_seeds(cfg.master_seed(), *trials);
            let sweep = harness::cmd_sweep_k(&cfg, k, &seeds, &out, common.workers)?;
            println!("{}", sweep.summary());
            Ok(())
        }),
        Command::PartitionReport { config, common } => load(config, common).and_then(|cfg| {
            let out = harness::output_dir(&common.out);
            let shards = harness::cmd_partition_report(&cfg, &out)?;
            println!("{} clients -> {}", shards.len(), out.join("partition.csv").display());
            Ok(())
        }),
        Command::Compare { config_dir, common } => {
            let out = harness::output_dir(&common.out);
            harness::cmd_compare(config_dir, &out, &common.set, common.workers).map(|rows| {
                println!("{}", harness::comparison_summary(&rows));
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
