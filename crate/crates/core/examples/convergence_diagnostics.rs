//! Runs MP-FedCL with diagnostics on and prints the per-round convergence
//! estimates (dissimilarity, gradient variance, learning-rate bound).
//!
//!     cargo run --release --example convergence_diagnostics

use protofed::config::ExperimentConfig;
use protofed::diagnostics::ConvergenceReport;
use protofed::harness;

fn main() -> protofed::Result<()> {
    let cfg = ExperimentConfig::from_value(serde_json::json!({
        "algorithm": "mp_fedcl",
        "N": 4,
        "T": 8,
        "loss": { "tau": 0.07 },
        "partition": { "dirichlet": { "alpha": 0.2 } },
        "diagnostics": { "enabled": true },
        "dataset": { "kind": "synthetic", "num_classes": 5, "dim": 10, "per_class": 100, "separation": 3.0 },
        "model": { "encoder": [32, 16], "head_hidden": [] }
    }))?;
    let art = harness::run_in_memory(&cfg, None)?;
    println!("{}", ConvergenceReport::CSV_HEADER);
    for r in &art.records {
        if let Some(c) = &r.convergence {
            println!("{}", c.csv_row());
        }
    }
    Ok(())
}
