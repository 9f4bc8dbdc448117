//! Trains FedAvg and MP-FedCL on the same synthetic label-skewed federation
//! and prints per-round accuracy.
//!
//!     cargo run --release --example quickstart

use protofed::config::ExperimentConfig;
use protofed::harness;

fn config(algorithm: &str) -> protofed::Result<ExperimentConfig> {
    let doc = serde_json::json!({
        "algorithm": algorithm,
        "N": 4,
        "T": 15,
        "K": 2,
        "loss": { "tau": 0.07 },
        "partition": { "dirichlet": { "alpha": 0.1 } },
        "seeds": { "master": 3 },
        "dataset": { "kind": "synthetic", "num_classes": 6, "dim": 16, "per_class": 150, "separation": 3.0 },
        "model": { "encoder": [64, 32], "head_hidden": [] }
    });
    ExperimentConfig::from_value(doc)
}

fn main() -> protofed::Result<()> {
    for algorithm in ["fedavg", "mp_fedcl"] {
        let art = harness::run_in_memory(&config(algorithm)?, None)?;
        println!("{algorithm}");
        for r in &art.records {
            println!("  round {:>2}  loss {:.4}  acc {:.3}", r.round, r.mean_train_loss, r.evaluation.mean);
        }
        let ev = art.final_evaluation();
        println!("  final per-client accuracy {:?}\n", ev.per_client);
    }
    Ok(())
}
