//! Accuracy of MP-FedCL as the number of prototypes per class varies, on a
//! synthetic dataset whose classes are mixtures of two clusters.
//!
//!     cargo run --release --example k_sweep

use protofed::config::ExperimentConfig;
use protofed::harness;

fn main() -> protofed::Result<()> {
    let cfg = ExperimentConfig::from_value(serde_json::json!({
        "algorithm": "mp_fedcl",
        "N": 3,
        "T": 10,
        "loss": { "tau": 0.1 },
        "partition": { "dirichlet": { "alpha": 0.3 } },
        "dataset": { "kind": "synthetic", "num_classes": 4, "dim": 12, "per_class": 120, "separation": 2.5 },
        "model": { "encoder": [32, 16], "head_hidden": [] }
    }))?;
    let out = std::env::temp_dir().join("protofed-k-sweep");
    let sweep = harness::cmd_sweep_k(&cfg, &[1, 2, 3, 4], &harness::trial_seeds(0, 2), &out, None)?;
    for r in &sweep.rows {
        println!("K={} seed={} acc={:.3}", r.k, r.seed, r.mean_acc);
    }
    println!("{}", sweep.summary());
    println!("rows written to {}", out.join("ksweep.csv").display());
    Ok(())
}
