//! Independent reference implementations shared by the integration tests.
//! Nothing here calls the library's loss, forward or clustering code.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use protofed::config::ExperimentConfig;
use protofed::datasets::{self, Dataset};
use protofed::losses::Regularizer;
use protofed::nn::{self, Activation, Architecture, Dense, ModelParams};
use protofed::prototypes::PrototypePool;
use protofed::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn mnist5k() -> Dataset {
    let d = data_dir().join("mnist5k");
    datasets::load_idx(d.join("images-idx3-ubyte"), d.join("labels-idx1-ubyte")).expect("bundled MNIST sample")
}

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn load_config(rel: &str, overrides: &[&str]) -> ExperimentConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    ExperimentConfig::load(configs_dir().join(rel), &o).expect("config loads")
}

/// Small synthetic experiment: Gaussian classes in 8 dimensions, tiny MLP.
pub fn synthetic_config(algorithm: &str, n: usize, t: usize, seed: u64) -> ExperimentConfig {
    let doc = serde_json::json!({
        "algorithm": algorithm, "N": n, "T": t, "K": 2, "B": 16, "lr": 0.05,
        "loss": {"tau": 0.2},
        "partition": {"dirichlet": {"alpha": 0.5}},
        "seeds": {"master": seed},
        "dataset": {"kind": "synthetic", "num_classes": 4, "dim": 8, "per_class": 60, "separation": 2.0},
        "model": {"encoder": [16, 8], "head_hidden": []}
    });
    ExperimentConfig::from_value(doc).expect("synthetic config")
}

// ---------------------------------------------------------------- model oracle

fn layer_scalar(layer: &Dense, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (rows, cols) = (layer.weights.rows(), layer.weights.cols());
    assert_eq!(rows, input.len());
    let mut pre = vec![0.0; cols];
    for j in 0..cols {
        let mut acc = layer.bias[j];
        for k in 0..rows {
            acc += input[k] * layer.weights.get(k, j);
        }
        pre[j] = acc;
    }
    let out = pre
        .iter()
        .map(|&z| if layer.activation == Activation::Relu { z.max(0.0) } else { z })
        .collect();
    (pre, out)
}

/// Straight-line forward pass; also returns every ReLU pre-activation.
pub fn naive_forward(params: &ModelParams, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut relu_pre = Vec::new();
    let mut cur = x.to_vec();
    for l in &params.encoder {
        let (pre, out) = layer_scalar(l, &cur);
        if l.activation == Activation::Relu {
            relu_pre.extend(pre);
        }
        cur = out;
    }
    let emb = cur.clone();
    for l in &params.head {
        let (pre, out) = layer_scalar(l, &cur);
        if l.activation == Activation::Relu {
            relu_pre.extend(pre);
        }
        cur = out;
    }
    (emb, cur, relu_pre)
}

fn lse(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Unit vector; the zero vector stays zero.
fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| x / n).collect()
}

/// The objective each algorithm adds to cross-entropy.
#[derive(Debug, Clone)]
pub enum OracleReg {
    None,
    Prox { global: ModelParams, mu: f64 },
    Proto { global: BTreeMap<usize, Vec<f64>>, lambda: f64 },
    Contrastive { pool: PrototypePool, tau: f64, normalize: bool },
}

impl OracleReg {
    pub fn as_regularizer(&self) -> Regularizer<'_> {
        match self {
            OracleReg::None => Regularizer::None,
            OracleReg::Prox { global, mu } => Regularizer::Proximal { global, mu: *mu },
            OracleReg::Proto { global, lambda } => Regularizer::Prototype { global, lambda: *lambda },
            OracleReg::Contrastive { pool, tau, normalize } => {
                Regularizer::Contrastive { pool, tau: *tau, normalize: *normalize }
            }
        }
    }
}

pub fn oracle_contrastive(emb: &[Vec<f64>], labels: &[usize], pool: &PrototypePool, tau: f64, normalize: bool) -> f64 {
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (&j, m) in &pool.per_class {
        for r in 0..m.rows() {
            let row = m.row(r).to_vec();
            rows.push((j, if normalize { unit(&row) } else { row }));
        }
    }
    let mut total = 0.0;
    for (v, &y) in emb.iter().zip(labels) {
        if !rows.iter().any(|(c, _)| *c == y) {
            continue;
        }
        let v = if normalize { unit(v) } else { v.clone() };
        let s: Vec<f64> = rows.iter().map(|(_, u)| v.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() / tau).collect();
        let pos: Vec<f64> = rows.iter().zip(&s).filter(|((c, _), _)| *c == y).map(|(_, &x)| x).collect();
        total += lse(&s) - lse(&pos);
    }
    total / emb.len() as f64
}

/// Cross-entropy plus regularizer, evaluated with scalar loops.
pub fn oracle_loss(params: &ModelParams, x: &Matrix, labels: &[usize], reg: &OracleReg) -> f64 {
    let mut embs = Vec::new();
    let mut ce = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let (emb, logits, _) = naive_forward(params, x.row(i));
        ce += lse(&logits) - logits[y];
        embs.push(emb);
    }
    ce /= labels.len() as f64;
    let r = match reg {
        OracleReg::None => 0.0,
        OracleReg::Prox { global, mu } => {
            let mut s = 0.0;
            for (a, b) in params.slices().iter().zip(global.slices()) {
                for (p, q) in a.iter().zip(b) {
                    s += (p - q) * (p - q);
                }
            }
            0.5 * mu * s
        }
        OracleReg::Proto { global, lambda } => {
            let mut sums: BTreeMap<usize, (Vec<f64>, f64)> = BTreeMap::new();
            for (e, &y) in embs.iter().zip(labels) {
                let ent = sums.entry(y).or_insert((vec![0.0; e.len()], 0.0));
                ent.0.iter_mut().zip(e).for_each(|(a, b)| *a += b);
                ent.1 += 1.0;
            }
            let mut acc = 0.0;
            let mut shared = 0.0;
            for (j, (s, n)) in &sums {
                if let Some(g) = global.get(j) {
                    acc += s.iter().zip(g).map(|(a, b)| (a / n - b) * (a / n - b)).sum::<f64>();
                    shared += 1.0;
                }
            }
            if shared > 0.0 {
                lambda * acc / shared
            } else {
                0.0
            }
        }
        OracleReg::Contrastive { pool, tau, normalize } => oracle_contrastive(&embs, labels, pool, *tau, *normalize),
    };
    ce + r
}

/// Largest relative disagreement between the library's analytic gradient and
/// central differences of [`oracle_loss`]. The denominator is floored at
/// `floor` so coordinates with (near-)zero gradient are compared absolutely.
pub fn fd_max_rel_error(params: &ModelParams, x: &Matrix, labels: &[usize], reg: &OracleReg, h: f64, floor: f64) -> f64 {
    let (_, grads) = nn::backward(params, x, labels, &reg.as_regularizer()).expect("backward");
    let analytic = grads.flatten();
    let mut p = params.clone();
    let sizes: Vec<usize> = params.slices().iter().map(|s| s.len()).collect();
    let mut flat = 0;
    let mut worst: f64 = 0.0;
    for (s, &len) in sizes.iter().enumerate() {
        for c in 0..len {
            let orig = p.slices()[s][c];
            p.slices_mut()[s][c] = orig + h;
            let up = oracle_loss(&p, x, labels, reg);
            p.slices_mut()[s][c] = orig - h;
            let down = oracle_loss(&p, x, labels, reg);
            p.slices_mut()[s][c] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[flat];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
            flat += 1;
        }
    }
    worst
}

pub const COMPOSITIONS: [&str; 6] = ["local", "fedavg", "fedprox", "fedproto", "sp_fedcl", "mp_fedcl"];

pub struct GradFixture {
    pub params: ModelParams,
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub reg: OracleReg,
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// A random small model, batch and regularizer for `composition`, or `None`
/// when some ReLU input or embedding norm sits too close to a kink for
/// central differences to be meaningful.
pub fn grad_fixture(seed: u64, composition: &str) -> Option<GradFixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = rng.random_range(2..=6);
    let enc_layers = rng.random_range(1..=2);
    let widths: Vec<usize> = (0..enc_layers).map(|_| rng.random_range(2..=16)).collect();
    let head_hidden: Vec<usize> = if enc_layers == 1 && rng.random_bool(0.5) {
        vec![rng.random_range(2..=16)]
    } else {
        vec![]
    };
    let classes = rng.random_range(2..=4);
    let arch = Architecture::mlp(input, &widths, &head_hidden, classes);
    let mut params = nn::init_params(&arch, rng.random()).unwrap();
    for s in params.slices_mut() {
        for v in s.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let batch = rng.random_range(1..=8);
    let x = random_matrix(&mut rng, batch, input, 1.5);
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    let embed = arch.embed_dim();

    let normalize = rng.random_bool(0.7);
    let reg = match composition {
        "local" | "fedavg" => OracleReg::None,
        "fedprox" => {
            let mut global = params.clone();
            for s in global.slices_mut() {
                s.iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
            }
            OracleReg::Prox { global, mu: rng.random_range(0.01..1.0) }
        }
        "fedproto" => {
            let mut global = BTreeMap::new();
            for j in 0..classes {
                if rng.random_bool(0.8) {
                    global.insert(j, (0..embed).map(|_| rng.random_range(-1.0..1.0)).collect());
                }
            }
            OracleReg::Proto { global, lambda: rng.random_range(0.1..2.0) }
        }
        "sp_fedcl" | "mp_fedcl" => {
            let k = if composition == "sp_fedcl" { 1 } else { rng.random_range(2..=3) };
            let mut pool = PrototypePool::default();
            for j in 0..classes {
                // occasionally leave a class out to exercise skipped samples
                if j > 0 && rng.random_bool(0.2) {
                    continue;
                }
                pool.per_class.insert(j, random_matrix(&mut rng, k, embed, 1.0));
            }
            OracleReg::Contrastive { pool, tau: rng.random_range(0.1..1.0), normalize }
        }
        other => panic!("unknown composition {other}"),
    };

    for i in 0..batch {
        let (emb, _, relu_pre) = naive_forward(&params, x.row(i));
        if relu_pre.iter().any(|z| z.abs() < 1e-3) {
            return None;
        }
        let norm = emb.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-2 {
            return None;
        }
    }
    Some(GradFixture { params, x, labels, reg })
}

/// The first `count` accepted fixtures for `composition`, starting at `seed`.
pub fn grad_fixtures(seed: u64, composition: &str, count: usize) -> Vec<GradFixture> {
    let mut out = Vec::new();
    let mut s = seed;
    while out.len() < count {
        if let Some(f) = grad_fixture(s, composition) {
            out.push(f);
        }
        s += 1;
    }
    out
}

// ---------------------------------------------------------------- k-means oracle

fn sse(points: &[Vec<f64>], members: &[usize]) -> f64 {
    if members.is_empty() {
        return 0.0;
    }
    let d = points[0].len();
    let mut mean = vec![0.0; d];
    for &i in members {
        mean.iter_mut().zip(&points[i]).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= members.len() as f64);
    members
        .iter()
        .map(|&i| points[i].iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum()
}

/// Minimum within-cluster sum of squares over every assignment of the points
/// to at most `k` clusters.
pub fn exhaustive_inertia(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let total = k.pow(n as u32);
    let mut best = f64::INFINITY;
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
    for code in 0..total {
        groups.iter_mut().for_each(Vec::clear);
        let mut c = code;
        for i in 0..n {
            groups[c % k].push(i);
            c /= k;
        }
        let v: f64 = groups.iter().map(|g| sse(points, g)).sum();
        best = best.min(v);
    }
    best
}

// ---------------------------------------------------------------- inference oracle

/// Nearest class by brute-force distance table over the client-contributed
/// rows; ties to the smaller class.
pub fn brute_force_class(emb: &[f64], pool: &PrototypePool, normalize: bool) -> usize {
    let q = if normalize { unit(emb) } else { emb.to_vec() };
    let mut table: Vec<(usize, f64)> = Vec::new();
    for (&j, m) in &pool.per_class {
        let real = pool.real_rows.get(&j).copied().unwrap_or(m.rows());
        for r in 0..real {
            let row = if normalize { unit(m.row(r)) } else { m.row(r).to_vec() };
            let d: f64 = q.iter().zip(&row).map(|(a, b)| (a - b) * (a - b)).sum();
            table.push((j, d));
        }
    }
    let mut best = table[0];
    for &(j, d) in &table[1..] {
        if d < best.1 || (d == best.1 && j < best.0) {
            best = (j, d);
        }
    }
    best.0
}

/// Argmax of independently computed logits; ties to the smaller class.
pub fn brute_force_classifier(params: &ModelParams, x: &[f64]) -> usize {
    let (_, logits, _) = naive_forward(params, x);
    let mut best = 0;
    for j in 1..logits.len() {
        if logits[j] > logits[best] {
            best = j;
        }
    }
    best
}
