//! Scalar objectives and their exact gradients.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{GradientVector, ModelParams};
use crate::prototypes::PrototypePool;
use crate::tensor::{self, Matrix};

/// Norms below this are treated as zero when unit-normalizing.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub tau: f64,
    pub use_contrastive: bool,
    pub normalize_embeddings: bool,
    pub mu_prox: f64,
    pub lambda_proto: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.07,
            use_contrastive: true,
            normalize_embeddings: true,
            mu_prox: 0.01,
            lambda_proto: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::invalid("tau must be positive"));
        }
        if !(self.mu_prox >= 0.0) || !(self.lambda_proto >= 0.0) {
            return Err(Error::invalid("mu_prox and lambda_proto must be non-negative"));
        }
        Ok(())
    }
}

/// The algorithm-specific term added to cross-entropy.
#[derive(Debug, Clone, Copy)]
pub enum Regularizer<'a> {
    None,
    /// Supervised contrastive pull toward the pooled prototypes of the label.
    Contrastive { pool: &'a PrototypePool, tau: f64, normalize: bool },
    /// FedProx: `(mu/2)·‖ω − ω_global‖²`.
    Proximal { global: &'a ModelParams, mu: f64 },
    /// FedProto: squared distance of batch class means to global class prototypes.
    Prototype { global: &'a BTreeMap<usize, Vec<f64>>, lambda: f64 },
}

impl<'a> Regularizer<'a> {
    /// Contrastive regularizer over `pool`, failing when the pool is missing.
    pub fn contrastive(pool: Option<&'a PrototypePool>, cfg: &LossConfig) -> Result<Self> {
        let pool = pool.ok_or(Error::MissingPool)?;
        Ok(Regularizer::Contrastive { pool, tau: cfg.tau, normalize: cfg.normalize_embeddings })
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let batch = logits.rows();
    if batch == 0 {
        return Err(Error::Empty("cross-entropy batch"));
    }
    if labels.len() != batch {
        return Err(Error::shape(format!("{} labels for {batch} logit rows", labels.len())));
    }
    let classes = logits.cols();
    let scale = 1.0 / batch as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(batch, classes);
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::invalid(format!("label {y} outside {classes} classes")));
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[y];
        let g = grad.row_mut(i);
        for (gj, z) in g.iter_mut().zip(row) {
            *gj = (z - max).exp() / sum * scale;
        }
        g[y] -= scale;
    }
    Ok((loss * scale, grad))
}

#[derive(Debug, Clone)]
pub struct ContrastiveOutput {
    pub loss: f64,
    pub grad: Matrix,
    /// Samples whose class is absent from the pool.
    pub skipped: usize,
}

fn unit_rows(m: &Matrix) -> (Matrix, Vec<f64>) {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let n = tensor::norm(m.row(i));
        norms.push(n);
        let r = out.row_mut(i);
        if n > NORM_EPS {
            r.iter_mut().for_each(|v| *v /= n);
        } else {
            r.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    (out, norms)
}

/// Prototype contrastive loss over the pooled rows.
///
/// For a sample with embedding `v` and label `y`, with `s_a = v·u_a / tau`
/// over every pooled row `u_a`, the loss is
/// `-log( Σ_{p ∈ pool[y]} exp(s_p) / Σ_a exp(s_a) )`, averaged over the batch.
/// Samples whose label has no pool entry add zero loss and zero gradient.
/// The pool is a constant: only the embedding gradient is returned.
pub fn contrastive_reg(
    embeddings: &Matrix,
    labels: &[usize],
    pool: &PrototypePool,
    tau: f64,
    normalize: bool,
) -> Result<ContrastiveOutput> {
    if !(tau > 0.0) {
        return Err(Error::invalid("tau must be positive"));
    }
    if pool.is_empty() {
        return Err(Error::Empty("prototype pool"));
    }
    if labels.len() != embeddings.rows() {
        return Err(Error::shape("labels and embeddings differ in length"));
    }
    let (rows, row_class) = pool.stacked();
    if rows.cols() != embeddings.cols() {
        return Err(Error::shape(format!(
            "pool width {} vs embedding width {}",
            rows.cols(),
            embeddings.cols()
        )));
    }
    let batch = embeddings.rows();
    let (protos, _) = if normalize { unit_rows(&rows) } else { (rows, vec![]) };
    let (v, norms) = if normalize {
        unit_rows(embeddings)
    } else {
        (embeddings.clone(), vec![])
    };

    let mut scores = v.matmul_nt(&protos)?;
    scores.as_mut_slice().iter_mut().for_each(|s| *s /= tau);

    let scale = 1.0 / batch.max(1) as f64;
    let mut loss = 0.0;
    let mut skipped = 0;
    let mut dscores = Matrix::zeros(batch, protos.rows());
    for (i, &y) in labels.iter().enumerate() {
        let s = scores.row(i);
        let positives = || s.iter().zip(&row_class).filter(move |(_, &c)| c == y).map(|(&v, _)| v);
        if positives().next().is_none() {
            skipped += 1;
            log::debug!("contrastive: class {y} absent from pool, sample skipped");
            continue;
        }
        let lse_all = log_sum_exp(s.iter().copied());
        let lse_pos = log_sum_exp(positives());
        loss += lse_all - lse_pos;
        for (a, d) in dscores.row_mut(i).iter_mut().enumerate() {
            let mut g = (s[a] - lse_all).exp();
            if row_class[a] == y {
                g -= (s[a] - lse_pos).exp();
            }
            *d = g * scale;
        }
    }

    let mut dv = dscores.matmul(&protos)?;
    dv.as_mut_slice().iter_mut().for_each(|g| *g /= tau);
    if normalize {
        for i in 0..batch {
            let n = norms[i];
            let vi = v.row(i);
            let proj = tensor::dot(vi, dv.row(i));
            let g = dv.row_mut(i);
            if n > NORM_EPS {
                for (gj, vj) in g.iter_mut().zip(vi) {
                    *gj = (*gj - vj * proj) / n;
                }
            } else {
                g.iter_mut().for_each(|gj| *gj = 0.0);
            }
        }
    }
    Ok(ContrastiveOutput { loss: loss * scale, grad: dv, skipped })
}

/// `(mu/2)·‖ω − ω_global‖²` over weights and biases (momentum excluded).
pub fn proximal_term(local: &ModelParams, global_ref: &ModelParams, mu: f64) -> Result<(f64, GradientVector)> {
    local.check_congruent(global_ref)?;
    let mut grads = GradientVector::zeros_like(local);
    let mut loss = 0.0;
    for ((g, w), w0) in grads.slices_mut().into_iter().zip(local.slices()).zip(global_ref.slices()) {
        for ((gv, a), b) in g.iter_mut().zip(w).zip(w0) {
            let d = a - b;
            loss += d * d;
            *gv = mu * d;
        }
    }
    Ok((0.5 * mu * loss, grads))
}

/// Per-class embedding means and counts.
pub fn class_means(embeddings: &Matrix, labels: &[usize]) -> (BTreeMap<usize, Vec<f64>>, BTreeMap<usize, usize>) {
    let mut sums: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for (row, &y) in embeddings.iter_rows().zip(labels) {
        let acc = sums.entry(y).or_insert_with(|| vec![0.0; row.len()]);
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
        *counts.entry(y).or_insert(0) += 1;
    }
    for (y, acc) in sums.iter_mut() {
        let n = counts[y] as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    (sums, counts)
}

/// `lambda · mean_j ‖c_j − g_j‖²` over classes present in both maps, with the
/// gradient w.r.t. each local mean `c_j`. No shared class gives zero.
pub fn fedproto_reg(
    local_class_means: &BTreeMap<usize, Vec<f64>>,
    global_single_protos: &BTreeMap<usize, Vec<f64>>,
    lambda: f64,
) -> Result<(f64, BTreeMap<usize, Vec<f64>>)> {
    let shared: Vec<usize> = local_class_means
        .keys()
        .filter(|j| global_single_protos.contains_key(j))
        .copied()
        .collect();
    let mut grads = BTreeMap::new();
    if shared.is_empty() {
        return Ok((0.0, grads));
    }
    let n = shared.len() as f64;
    let mut loss = 0.0;
    for j in shared {
        let c = &local_class_means[&j];
        let g = &global_single_protos[&j];
        if c.len() != g.len() {
            return Err(Error::shape(format!("class {j}: prototype width mismatch")));
        }
        loss += tensor::sq_dist(c, g);
        grads.insert(j, c.iter().zip(g).map(|(a, b)| 2.0 * lambda * (a - b) / n).collect());
    }
    Ok((lambda * loss / n, grads))
}
