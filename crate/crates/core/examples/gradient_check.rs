//! Compares the analytic gradient of cross-entropy plus the contrastive
//! regularizer with central finite differences on a tiny model.
//!
//!     cargo run --release --example gradient_check

use protofed::losses::{LossConfig, Regularizer};
use protofed::nn::{self, Architecture};
use protofed::prototypes::PrototypePool;
use protofed::Matrix;

fn main() -> protofed::Result<()> {
    let arch = Architecture::mlp(3, &[6, 4], &[], 3);
    let mut params = nn::init_params(&arch, 11)?;
    let x = Matrix::from_rows(&[[0.5, -1.0, 0.3], [1.2, 0.4, -0.7], [-0.3, 0.9, 1.1]])?;
    let labels = [0, 2, 1];

    let mut pool = PrototypePool::default();
    pool.per_class.insert(0, Matrix::from_rows(&[[1.0, 0.0, 0.0, 0.5], [0.8, 0.2, 0.0, 0.0]])?);
    pool.per_class.insert(1, Matrix::from_rows(&[[0.0, 1.0, 0.3, 0.0], [0.0, 0.7, 0.0, 0.6]])?);
    pool.per_class.insert(2, Matrix::from_rows(&[[0.0, 0.0, 1.0, 0.2], [0.3, 0.0, 0.8, 0.0]])?);
    let loss_cfg = LossConfig { tau: 0.5, ..LossConfig::default() };
    let reg = Regularizer::contrastive(Some(&pool), &loss_cfg)?;

    let (_, grads) = nn::backward(&params, &x, &labels, &reg)?;
    let analytic = grads.flatten();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut idx = 0;
    for s in 0..params.slices().len() {
        for c in 0..params.slices()[s].len() {
            let orig = params.slices()[s][c];
            params.slices_mut()[s][c] = orig + h;
            let up = nn::backward(&params, &x, &labels, &reg)?.0.total();
            params.slices_mut()[s][c] = orig - h;
            let down = nn::backward(&params, &x, &labels, &reg)?.0.total();
            params.slices_mut()[s][c] = orig;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((analytic[idx] - fd).abs() / analytic[idx].abs().max(fd.abs()).max(1e-6));
            idx += 1;
        }
    }
    println!("{idx} parameters, worst relative error {worst:.3e}");
    Ok(())
}
