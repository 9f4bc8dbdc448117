//! Writes a handful of MNIST digits as IDX files, reads them back and prints
//! one as ASCII art.
//!
//!     cargo run --release --example idx_roundtrip

use std::path::Path;

use protofed::datasets;

fn main() -> protofed::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist5k");
    let mnist = datasets::load_idx(dir.join("images-idx3-ubyte"), dir.join("labels-idx1-ubyte"))?;
    let few = mnist.subset(&[0, 1, 2]);

    let tmp = std::env::temp_dir();
    let (img, lab) = (tmp.join("protofed-few-images"), tmp.join("protofed-few-labels"));
    datasets::write_idx(&few, (28, 28), &img, &lab)?;
    let back = datasets::load_idx(&img, &lab)?;
    assert_eq!((&back.features, &back.labels), (&few.features, &few.labels));

    println!("label {}", back.labels[0]);
    for row in back.features.row(0).chunks(28) {
        let line: String = row.iter().map(|&v| if v > 0.5 { '#' } else if v > 0.1 { '+' } else { ' ' }).collect();
        println!("{line}");
    }
    Ok(())
}
