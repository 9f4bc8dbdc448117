//! Per-round estimates of the convergence-analysis constants and the
//! learning-rate bound they imply. These are health indicators, not proofs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, GradientVector, ModelParams};
use crate::tensor::{self, Matrix};

/// Below this global-gradient norm the dissimilarity ratio is undefined.
pub const GRAD_NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundConstants {
    pub global_grad_norm: f64,
    /// `None` when the weighted mean gradient vanishes.
    pub delta_hat: Option<f64>,
    pub sigma2_hat: f64,
    pub g_hat: f64,
}

/// One row of `convergence.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub round: usize,
    pub global_grad_norm: f64,
    pub delta_hat: Option<f64>,
    pub sigma2_hat: f64,
    pub g_hat: f64,
    pub a_p: usize,
    pub l2_hat: Option<f64>,
    pub eta_bound: Option<f64>,
    pub eta_used: f64,
    /// `eta_used ≤ eta_bound` with a positive bound.
    pub decreasing_ok: bool,
    /// Whether the weighted full-shard loss dropped since the previous round.
    pub loss_decreased: Option<bool>,
}

impl ConvergenceReport {
    pub const CSV_HEADER: &'static str =
        "round,global_grad_norm,delta_hat,sigma2_hat,g_hat,a_p,l2_hat,eta_bound,eta_used,decreasing_ok,loss_decreased";

    pub fn csv_row(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.round,
            self.global_grad_norm,
            opt(self.delta_hat),
            self.sigma2_hat,
            self.g_hat,
            self.a_p,
            opt(self.l2_hat),
            opt(self.eta_bound),
            self.eta_used,
            self.decreasing_ok,
            self.loss_decreased.map(|b| b.to_string()).unwrap_or_default(),
        )
    }
}

/// Weighted mean gradient `ḡ`, `δ̂ = sqrt(E‖g_i‖² / ‖ḡ‖²)`, `σ̂² = E‖g_i − ḡ‖²`
/// and `Ĝ = max ‖g_i‖`. Weights are normalised to sum to one.
pub fn estimate_round_constants(client_grads: &[GradientVector], weights: &[f64]) -> Result<RoundConstants> {
    if client_grads.len() < 2 {
        return Err(Error::invalid("need gradients from at least two clients"));
    }
    if weights.len() != client_grads.len() {
        return Err(Error::invalid("one weight per client gradient"));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|&w| w < 0.0) {
        return Err(Error::invalid("weights must be non-negative with a positive sum"));
    }
    let flat: Vec<Vec<f64>> = client_grads.iter().map(GradientVector::flatten).collect();
    let dim = flat[0].len();
    if flat.iter().any(|g| g.len() != dim) {
        return Err(Error::shape("client gradients differ in size"));
    }
    let w: Vec<f64> = weights.iter().map(|x| x / total).collect();
    let mut mean = vec![0.0; dim];
    for (g, wi) in flat.iter().zip(&w) {
        for (m, v) in mean.iter_mut().zip(g) {
            *m += wi * v;
        }
    }
    let mean_sq = tensor::dot(&mean, &mean);
    let second_moment: f64 = flat.iter().zip(&w).map(|(g, wi)| wi * tensor::dot(g, g)).sum();
    let sigma2_hat = flat.iter().zip(&w).map(|(g, wi)| wi * tensor::sq_dist(g, &mean)).sum();
    let g_hat = flat.iter().map(|g| tensor::norm(g)).fold(0.0, f64::max);
    let global_grad_norm = mean_sq.sqrt();
    let delta_hat = (global_grad_norm >= GRAD_NORM_FLOOR).then(|| (second_moment / mean_sq).sqrt());
    Ok(RoundConstants { global_grad_norm, delta_hat, sigma2_hat, g_hat })
}

/// Inputs of the monotone-decrease learning-rate condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub sigma2: f64,
    pub tau: f64,
    pub num_clients: usize,
    pub a_p: usize,
    pub l2: f64,
    /// `Σ G·v`, the gradient-bound-weighted embedding mass.
    pub g_v_sum: f64,
    pub l1: f64,
    pub grad_norm_sq: f64,
    pub delta_sq: f64,
}

/// `2(σ²τN − A_p·L₂·ΣGv) / (L₁·‖∇L‖²·τ·δ²·N)`, unclamped.
pub fn lr_bound(b: &BoundInputs) -> f64 {
    let n = b.num_clients as f64;
    let numerator = 2.0 * (b.sigma2 * b.tau * n - b.a_p as f64 * b.l2 * b.g_v_sum);
    numerator / (b.l1 * b.grad_norm_sq * b.tau * b.delta_sq * n)
}

fn encoder_delta_norm(before: &ModelParams, after: &ModelParams) -> f64 {
    before
        .encoder_slices()
        .iter()
        .zip(after.encoder_slices())
        .map(|(a, b)| tensor::sq_dist(a, b))
        .sum::<f64>()
        .sqrt()
}

/// Largest `‖f_e(x; after) − f_e(x; before)‖ / ‖Δω_e‖` over the probe rows,
/// a lower bound on the embedding Lipschitz constant. `None` when the
/// encoder did not move or there are no probes.
pub fn estimate_embedding_lipschitz(before: &ModelParams, after: &ModelParams, probe: &Matrix) -> Result<Option<f64>> {
    before.check_congruent(after)?;
    let delta = encoder_delta_norm(before, after);
    if delta == 0.0 || probe.rows() == 0 {
        return Ok(None);
    }
    let e0 = nn::forward_encoder(before, probe)?;
    let e1 = nn::forward_encoder(after, probe)?;
    let ratio = e0
        .iter_rows()
        .zip(e1.iter_rows())
        .map(|(a, b)| tensor::sq_dist(a, b).sqrt() / delta)
        .fold(0.0, f64::max);
    Ok(Some(ratio))
}
