//! Label histograms of a Dir(0.05) split of the bundled MNIST sample, next to
//! a near-IID split for contrast.
//!
//!     cargo run --release --example partition_report

use std::path::Path;

use protofed::datasets;

fn main() -> protofed::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist5k");
    let mnist = datasets::load_idx(dir.join("images-idx3-ubyte"), dir.join("labels-idx1-ubyte"))?;
    let ds = datasets::subsample(&mnist, 2000, 1)?;

    for alpha in [0.05, 100.0] {
        println!("alpha = {alpha}");
        for s in datasets::partition_dirichlet(&ds, 5, alpha, 1)? {
            let hist: Vec<String> = s.label_histogram.iter().map(|c| format!("{c:>4}")).collect();
            println!("  client {}  train {:>4}  test {:>3}  [{}]", s.client_id, s.train.len(), s.test.len(), hist.join(""));
        }
    }
    Ok(())
}
