//! Experiment commands and their on-disk outputs.
//!
//! Every command takes a parsed [`ExperimentConfig`] and an output directory
//! and writes LF-terminated CSV plus JSON summaries there. Nothing depends on
//! the clock except `manifest.json`'s `created_at`, which is excluded from the
//! manifest hash quoted by the other files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::datasets::{ClientShard, Dataset};
use crate::diagnostics::ConvergenceReport;
use crate::error::{Error, Result};
use crate::federation::{self, RoundRecord, RunArtifacts};
use crate::inference::{self, Evaluation};
use crate::nn::ModelParams;
use crate::seeds;

pub const METRICS_HEADER: &str = "round,client_id,train_loss,eval_acc,lr,algorithm,seed";
pub const KSWEEP_HEADER: &str = "K,seed,mean_acc";
pub const COMPARISON_HEADER: &str = "algorithm,seed,mean_acc,std";
/// Environment variable that replaces the output directory of every command.
pub const OUT_ENV: &str = "PROTOFED_OUT";

/// Process exit code for a failed command: 2 for bad configs, 3 for a
/// diverged run, 4 for I/O and data-file problems, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Schema(_) | Error::InvalidArgument(_) => 2,
        Error::NonFinite { .. } => 3,
        Error::Io(_) | Error::Format(_) | Error::Json(_) => 4,
        _ => 1,
    }
}

/// `PROTOFED_OUT` when set, else `default`.
pub fn output_dir(default: impl Into<PathBuf>) -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| default.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedSeeds {
    pub master: u64,
    pub partition: u64,
    pub init: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub config: ExperimentConfig,
    pub output_dir: PathBuf,
    /// Seconds since the Unix epoch; not part of [`ExperimentManifest::hash`].
    pub created_at: u64,
    pub tool_version: String,
    pub seeds: ResolvedSeeds,
}

impl ExperimentManifest {
    pub fn new(config: &ExperimentConfig, output_dir: &Path) -> Self {
        let master = config.master_seed();
        ExperimentManifest {
            config: config.clone(),
            output_dir: output_dir.to_path_buf(),
            created_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: ResolvedSeeds {
                master,
                partition: seeds::derive(master, &[seeds::TAG_PARTITION]),
                init: seeds::derive(master, &[seeds::TAG_INIT]),
            },
        }
    }

    /// SHA-256 over the config, tool version and seeds.
    pub fn hash(&self) -> String {
        let stable = serde_json::json!({
            "config": self.config,
            "tool_version": self.tool_version,
            "seeds": self.seeds,
        });
        let digest = Sha256::digest(stable.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Data, shards and starting model for a config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub shards: Vec<ClientShard>,
    pub initial: ModelParams,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let dataset = cfg.load_dataset()?;
    let shards = cfg.build_shards(&dataset)?;
    let initial = cfg.initial_params(&dataset)?;
    Ok(Prepared { dataset, shards, initial })
}

/// Trains in memory without touching the filesystem.
pub fn run_in_memory(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<RunArtifacts> {
    let p = prepare(cfg)?;
    let workers = workers.unwrap_or(cfg.run.num_clients);
    federation::run_training(&cfg.run, p.shards, p.initial, workers, |_| Ok(()))
}

/// Per-client rows then the summary row (`client_id = -1`) for one round.
pub fn metrics_rows(record: &RoundRecord, algorithm: &str, seed: u64) -> Vec<String> {
    let mut rows: Vec<String> = record
        .clients
        .iter()
        .map(|c| {
            format!(
                "{},{},{},{},{},{algorithm},{seed}",
                record.round, c.client_id, c.train_loss, c.eval_acc, record.lr
            )
        })
        .collect();
    rows.push(format!(
        "{},-1,{},{},{},{algorithm},{seed}",
        record.round, record.mean_train_loss, record.evaluation.mean, record.lr
    ));
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub algorithm: String,
    pub seed: u64,
    pub rounds: usize,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub per_client_acc: Vec<f64>,
    pub final_train_loss: f64,
    pub manifest_hash: String,
}

#[derive(Serialize)]
struct PoolFile<'a> {
    manifest_hash: &'a str,
    #[serde(flatten)]
    pool: crate::prototypes::PoolSnapshot,
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Trains once and writes `metrics.csv`, `convergence.csv`, `result.json`,
/// `pool.json` and `manifest.json` into `out`.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path, workers: Option<usize>) -> Result<RunResult> {
    fs::create_dir_all(out)?;
    let manifest = ExperimentManifest::new(cfg, out);
    let hash = manifest.hash();
    write_json(&out.join("manifest.json"), &manifest)?;

    let p = prepare(cfg)?;
    let algorithm = cfg.run.algorithm.name();
    let seed = cfg.master_seed();
    let mut metrics = create(&out.join("metrics.csv"))?;
    writeln!(metrics, "{METRICS_HEADER}")?;
    let mut convergence = create(&out.join("convergence.csv"))?;
    writeln!(convergence, "{}", ConvergenceReport::CSV_HEADER)?;

    let workers = workers.unwrap_or(cfg.run.num_clients);
    let artifacts = federation::run_training(&cfg.run, p.shards, p.initial, workers, |rec| {
        for row in metrics_rows(rec, algorithm, seed) {
            writeln!(metrics, "{row}")?;
        }
        metrics.flush()?;
        if let Some(c) = &rec.convergence {
            writeln!(convergence, "{}", c.csv_row())?;
        }
        Ok(())
    })?;
    convergence.flush()?;

    let last = artifacts.records.last().ok_or(Error::Empty("rounds"))?;
    let result = RunResult {
        algorithm: algorithm.to_string(),
        seed,
        rounds: artifacts.records.len(),
        mean_acc: last.evaluation.mean,
        std_acc: last.evaluation.std,
        per_client_acc: last.evaluation.per_client.clone(),
        final_train_loss: last.mean_train_loss,
        manifest_hash: hash.clone(),
    };
    write_json(&out.join("result.json"), &result)?;
    write_json(&out.join("pool.json"), &PoolFile { manifest_hash: &hash, pool: artifacts.final_pool.snapshot() })?;
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KSweepRow {
    pub k: usize,
    pub seed: u64,
    pub mean_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KSweep {
    pub rows: Vec<KSweepRow>,
}

impl KSweep {
    /// Best K per seed (ties to the smaller K), in seed order of first appearance.
    pub fn best_k_per_seed(&self) -> Vec<(u64, usize)> {
        let mut best: Vec<(u64, usize, f64)> = Vec::new();
        for r in &self.rows {
            match best.iter_mut().find(|b| b.0 == r.seed) {
                Some(b) if r.mean_acc > b.2 || (r.mean_acc == b.2 && r.k < b.1) => *b = (r.seed, r.k, r.mean_acc),
                Some(_) => {}
                None => best.push((r.seed, r.k, r.mean_acc)),
            }
        }
        best.into_iter().map(|(s, k, _)| (s, k)).collect()
    }

    pub fn summary(&self) -> String {
        self.best_k_per_seed()
            .iter()
            .map(|(s, k)| format!("seed {s}: best K = {k}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Seeds `master, master+1, ...` used when a command runs several trials.
pub fn trial_seeds(master: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| master.wrapping_add(i)).collect()
}

/// One training per (K, seed); writes `ksweep.csv`.
pub fn cmd_sweep_k(
    cfg: &ExperimentConfig,
    k_values: &[usize],
    seeds: &[u64],
    out: &Path,
    workers: Option<usize>,
) -> Result<KSweep> {
    if k_values.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("sweep needs at least one K and one seed"));
    }
    fs::create_dir_all(out)?;
    let mut sweep = KSweep::default();
    let mut file = create(&out.join("ksweep.csv"))?;
    writeln!(file, "{KSWEEP_HEADER}")?;
    for &seed in seeds {
        for &k in k_values {
            let mut c = cfg.clone();
            c.run.k = k;
            c.run.seeds.master = seed;
            c.run.validate()?;
            let art = run_in_memory(&c, workers)?;
            let mean_acc = art.final_evaluation().mean;
            log::info!("K={k} seed={seed}: mean accuracy {mean_acc}");
            writeln!(file, "{k},{seed},{mean_acc}")?;
            file.flush()?;
            sweep.rows.push(KSweepRow { k, seed, mean_acc });
        }
    }
    Ok(sweep)
}

/// Per-client label histograms without training; writes `partition.csv`
/// with columns `client_id,split,class_0,...`.
pub fn cmd_partition_report(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<ClientShard>> {
    fs::create_dir_all(out)?;
    let ds = cfg.load_dataset()?;
    let shards = cfg.build_shards(&ds)?;
    let mut file = create(&out.join("partition.csv"))?;
    let classes: Vec<String> = (0..ds.num_classes).map(|j| format!("class_{j}")).collect();
    writeln!(file, "client_id,split,{}", classes.join(","))?;
    for s in &shards {
        for (name, split) in [("train", &s.train), ("test", &s.test)] {
            let counts: Vec<String> = split.histogram().iter().map(usize::to_string).collect();
            writeln!(file, "{},{name},{}", s.client_id, counts.join(","))?;
        }
    }
    file.flush()?;
    Ok(shards)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub config: String,
    pub algorithm: String,
    pub seed: u64,
    pub mean_acc: f64,
    pub std: f64,
}

/// Runs every `*.json` config in `dir` (sorted by file name) and writes
/// `comparison.csv`. Configs sharing a dataset, partition and seed see the
/// same shards.
pub fn cmd_compare(dir: &Path, out: &Path, overrides: &[String], workers: Option<usize>) -> Result<Vec<ComparisonRow>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!("no *.json configs in {}", dir.display())));
    }
    let configs = paths
        .iter()
        .map(|p| ExperimentConfig::load(p, overrides))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    let mut file = create(&out.join("comparison.csv"))?;
    writeln!(file, "{COMPARISON_HEADER}")?;
    for (path, cfg) in paths.iter().zip(&configs) {
        let art = run_in_memory(cfg, workers)?;
        let Evaluation { mean, std, .. } = art.final_evaluation().clone();
        let algorithm = cfg.run.algorithm.name().to_string();
        writeln!(file, "{algorithm},{},{mean},{std}", cfg.master_seed())?;
        file.flush()?;
        rows.push(ComparisonRow {
            config: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            algorithm,
            seed: cfg.master_seed(),
            mean_acc: mean,
            std,
        });
    }
    Ok(rows)
}

/// `algorithm: mean(std)` in percent over the rows of each algorithm, the
/// std being across seeds.
pub fn comparison_summary(rows: &[ComparisonRow]) -> String {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.algorithm.as_str()) {
            names.push(&r.algorithm);
        }
    }
    let mut lines = Vec::new();
    for name in names {
        let accs: Vec<f64> = rows.iter().filter(|r| r.algorithm == name).map(|r| r.mean_acc * 100.0).collect();
        let (m, s) = inference::mean_std(&accs);
        lines.push(format!("{name}: {m:.2}({s:.2})"));
    }
    lines.join("\n")
}
