//! Builds per-class multi-prototypes for two clients with k-means, merges them
//! into a padded global pool and classifies a few points by nearest prototype.
//!
//!     cargo run --release --example prototype_pool

use std::collections::BTreeMap;

use protofed::kmeans::KMeansConfig;
use protofed::prototypes::{aggregate_pool, compute_local_prototypes};
use protofed::{inference, Matrix};

fn main() -> protofed::Result<()> {
    // client 0 sees classes 0 and 1, client 1 only class 1; class 1 is bimodal
    let client0 = BTreeMap::from([
        (0, Matrix::from_rows(&[[0.0, 0.0], [0.2, 0.1], [-0.1, 0.2]])?),
        (1, Matrix::from_rows(&[[4.0, 0.0], [4.1, 0.3], [0.0, 4.0], [0.2, 4.1]])?),
    ]);
    let client1 = BTreeMap::from([(1, Matrix::from_rows(&[[3.8, -0.2], [0.1, 3.9], [-0.1, 4.2]])?)]);

    let cfg = KMeansConfig { restarts: 5, ..KMeansConfig::default() };
    let p0 = compute_local_prototypes(0, &client0, 2, &cfg, 7, None)?;
    let p1 = compute_local_prototypes(1, &client1, 2, &cfg, 8, None)?;
    let pool = aggregate_pool(&[&p0, &p1], 2, 2, 2, 1)?;

    for (j, rows) in &pool.per_class {
        println!("class {j}: {} rows, {} from clients", rows.rows(), pool.real_row_count(*j));
        for i in 0..rows.rows() {
            println!("  {:?}", rows.row(i));
        }
    }
    for q in [[0.5, 0.5], [3.0, 0.5], [0.5, 3.0], [2.0, 2.0]] {
        println!("{q:?} -> class {}", inference::nearest_prototype_class(&q, &pool, false)?);
    }
    Ok(())
}
