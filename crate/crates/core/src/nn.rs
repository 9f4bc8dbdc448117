//! The shared model: a ReLU MLP split into an encoder (producing embeddings)
//! and a head (producing logits), with exact backpropagation and momentum SGD.

use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{self, Regularizer};
use crate::seeds;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        LayerSpec { in_dim, out_dim, activation }
    }
}

/// Layer chain of the encoder followed by the head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub encoder: Vec<LayerSpec>,
    pub head: Vec<LayerSpec>,
}

impl Architecture {
    /// ReLU encoder of the given widths, ReLU hidden head layers and a linear
    /// output layer with `classes` units.
    pub fn mlp(input_dim: usize, encoder_widths: &[usize], head_hidden: &[usize], classes: usize) -> Self {
        let mut encoder = Vec::with_capacity(encoder_widths.len());
        let mut prev = input_dim;
        for &w in encoder_widths {
            encoder.push(LayerSpec::new(prev, w, Activation::Relu));
            prev = w;
        }
        let mut head = Vec::with_capacity(head_hidden.len() + 1);
        for &w in head_hidden {
            head.push(LayerSpec::new(prev, w, Activation::Relu));
            prev = w;
        }
        head.push(LayerSpec::new(prev, classes, Activation::None));
        Architecture { encoder, head }
    }

    /// 784-512-512 encoder, 512-256-10 head.
    pub fn mnist() -> Self {
        Architecture::mlp(784, &[512, 512], &[256], 10)
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.is_empty() || self.head.is_empty() {
            return Err(Error::shape("encoder and head need at least one layer each"));
        }
        let chain: Vec<&LayerSpec> = self.encoder.iter().chain(&self.head).collect();
        for (i, l) in chain.iter().enumerate() {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(Error::shape(format!("layer {i} has a zero dimension")));
            }
            if i > 0 && chain[i - 1].out_dim != l.in_dim {
                return Err(Error::shape(format!(
                    "layer {i} expects {} inputs but previous layer emits {}",
                    l.in_dim,
                    chain[i - 1].out_dim
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].in_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.encoder.last().map_or(0, |l| l.out_dim)
    }

    pub fn num_classes(&self) -> usize {
        self.head.last().map_or(0, |l| l.out_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `in_dim × out_dim`, so a layer computes `x · W + b`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientVector {
    pub encoder: Vec<DenseGrad>,
    pub head: Vec<DenseGrad>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: Vec<Dense>,
    pub head: Vec<Dense>,
    pub momentum: GradientVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    /// Parameters are rounded to single precision after every update.
    F32,
}

fn dense_slices(layers: &[Dense]) -> impl Iterator<Item = &[f64]> {
    layers.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
}

fn dense_slices_mut(layers: &mut [Dense]) -> impl Iterator<Item = &mut [f64]> {
    layers.iter_mut().flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
}

fn grad_slices(layers: &[DenseGrad]) -> impl Iterator<Item = &[f64]> {
    layers.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
}

fn grad_slices_mut(layers: &mut [DenseGrad]) -> impl Iterator<Item = &mut [f64]> {
    layers.iter_mut().flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
}

impl ModelParams {
    /// Weight and bias buffers in layer order, encoder first.
    pub fn slices(&self) -> Vec<&[f64]> {
        dense_slices(&self.encoder).chain(dense_slices(&self.head)).collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        dense_slices_mut(&mut self.encoder).chain(dense_slices_mut(&mut self.head)).collect()
    }

    pub fn encoder_slices(&self) -> Vec<&[f64]> {
        dense_slices(&self.encoder).collect()
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn architecture(&self) -> Architecture {
        let spec = |l: &Dense| LayerSpec::new(l.weights.rows(), l.weights.cols(), l.activation);
        Architecture {
            encoder: self.encoder.iter().map(spec).collect(),
            head: self.head.iter().map(spec).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn reset_momentum(&mut self) {
        for s in self.momentum.slices_mut() {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn quantize(&mut self, precision: Precision) {
        if precision == Precision::F32 {
            for s in self.slices_mut() {
                s.iter_mut().for_each(|v| *v = *v as f32 as f64);
            }
            for s in self.momentum.slices_mut() {
                s.iter_mut().for_each(|v| *v = *v as f32 as f64);
            }
        }
    }

    pub fn check_congruent(&self, other: &ModelParams) -> Result<()> {
        if self.architecture() != other.architecture() {
            return Err(Error::shape("parameter sets have different architectures"));
        }
        Ok(())
    }
}

impl GradientVector {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let zero = |l: &Dense| DenseGrad {
            weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
            bias: vec![0.0; l.bias.len()],
        };
        GradientVector {
            encoder: params.encoder.iter().map(zero).collect(),
            head: params.head.iter().map(zero).collect(),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        grad_slices(&self.encoder).chain(grad_slices(&self.head)).collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        grad_slices_mut(&mut self.encoder).chain(grad_slices_mut(&mut self.head)).collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn norm_sq(&self) -> f64 {
        self.slices().iter().flat_map(|s| s.iter()).map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// `self += alpha · other`
    pub fn add_scaled(&mut self, other: &GradientVector, alpha: f64) -> Result<()> {
        let theirs = other.slices();
        let mut mine = self.slices_mut();
        if mine.len() != theirs.len() || mine.iter().zip(&theirs).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::shape("gradient shapes differ"));
        }
        for (a, b) in mine.iter_mut().zip(theirs) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += alpha * y;
            }
        }
        Ok(())
    }

    fn congruent_with(&self, params: &ModelParams) -> bool {
        let g = self.slices();
        let p = params.slices();
        g.len() == p.len() && g.iter().zip(&p).all(|(a, b)| a.len() == b.len())
    }
}

/// Fan-in scaled uniform weights, zero biases, zero momentum.
pub fn init_params(arch: &Architecture, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = seeds::rng(seed);
    let mut build = |specs: &[LayerSpec]| -> Result<Vec<Dense>> {
        specs
            .iter()
            .map(|s| {
                let bound = 1.0 / (s.in_dim as f64).sqrt();
                let dist = Uniform::new(-bound, bound).map_err(|e| Error::invalid(e.to_string()))?;
                let data = (0..s.in_dim * s.out_dim).map(|_| dist.sample(&mut rng)).collect();
                Ok(Dense {
                    weights: Matrix::from_vec(s.in_dim, s.out_dim, data)?,
                    bias: vec![0.0; s.out_dim],
                    activation: s.activation,
                })
            })
            .collect()
    };
    let encoder = build(&arch.encoder)?;
    let head = build(&arch.head)?;
    let mut params = ModelParams {
        encoder,
        head,
        momentum: GradientVector { encoder: vec![], head: vec![] },
    };
    params.momentum = GradientVector::zeros_like(&params);
    Ok(params)
}

/// Runs `layers` on `x`. When `trace` is given it receives the input of every
/// layer followed by the final output.
fn forward_stack(layers: &[Dense], x: &Matrix, mut trace: Option<&mut Vec<Matrix>>) -> Result<Matrix> {
    let mut cur = x.clone();
    for layer in layers {
        if cur.cols() != layer.weights.rows() {
            return Err(Error::shape(format!(
                "layer expects {} features, got {}",
                layer.weights.rows(),
                cur.cols()
            )));
        }
        let mut z = cur.matmul(&layer.weights)?;
        let width = z.cols();
        for (i, v) in z.as_mut_slice().iter_mut().enumerate() {
            *v += layer.bias[i % width];
            if layer.activation == Activation::Relu && *v < 0.0 {
                *v = 0.0;
            }
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(cur);
        }
        cur = z;
    }
    if let Some(t) = trace {
        t.push(cur.clone());
    }
    Ok(cur)
}

/// Backpropagates `dout` through `layers` given the trace from [`forward_stack`].
/// Returns the layer gradients and the gradient w.r.t. the stack input.
fn backward_stack(layers: &[Dense], trace: &[Matrix], mut dout: Matrix) -> Result<(Vec<DenseGrad>, Matrix)> {
    let mut grads = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate().rev() {
        if layer.activation == Activation::Relu {
            let out = &trace[l + 1];
            for (d, &o) in dout.as_mut_slice().iter_mut().zip(out.as_slice()) {
                if o <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let weights = trace[l].matmul_tn(&dout)?;
        let mut bias = vec![0.0; dout.cols()];
        for r in dout.iter_rows() {
            for (b, v) in bias.iter_mut().zip(r) {
                *b += v;
            }
        }
        let dinput = dout.matmul_nt(&layer.weights)?;
        grads.push(DenseGrad { weights, bias });
        dout = dinput;
    }
    grads.reverse();
    Ok((grads, dout))
}

/// Embeddings `f_e(x)` for every row of `batch`.
pub fn forward_encoder(params: &ModelParams, batch: &Matrix) -> Result<Matrix> {
    forward_stack(&params.encoder, batch, None)
}

/// Logits of the head applied to precomputed embeddings.
pub fn forward_head(params: &ModelParams, embeddings: &Matrix) -> Result<Matrix> {
    forward_stack(&params.head, embeddings, None)
}

pub fn forward(params: &ModelParams, batch: &Matrix) -> Result<Matrix> {
    forward_head(params, &forward_encoder(params, batch)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub supervised: f64,
    pub regularizer: f64,
    /// Samples whose label had no prototypes in the pool.
    pub skipped: usize,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.supervised + self.regularizer
    }
}

/// Loss and exact gradient of cross-entropy plus the given regularizer.
pub fn backward(
    params: &ModelParams,
    batch: &Matrix,
    labels: &[usize],
    reg: &Regularizer<'_>,
) -> Result<(LossParts, GradientVector)> {
    if labels.len() != batch.rows() {
        return Err(Error::shape(format!("{} labels for {} rows", labels.len(), batch.rows())));
    }
    let mut enc_trace = Vec::with_capacity(params.encoder.len() + 1);
    let emb = forward_stack(&params.encoder, batch, Some(&mut enc_trace))?;
    let mut head_trace = Vec::with_capacity(params.head.len() + 1);
    let logits = forward_stack(&params.head, &emb, Some(&mut head_trace))?;

    let (supervised, dlogits) = losses::cross_entropy(&logits, labels)?;
    let (head_grads, mut demb) = backward_stack(&params.head, &head_trace, dlogits)?;

    let mut parts = LossParts { supervised, ..Default::default() };
    match reg {
        Regularizer::None | Regularizer::Proximal { .. } => {}
        Regularizer::Contrastive { pool, tau, normalize } => {
            let out = losses::contrastive_reg(&emb, labels, pool, *tau, *normalize)?;
            parts.regularizer = out.loss;
            parts.skipped = out.skipped;
            add_into(&mut demb, &out.grad);
        }
        Regularizer::Prototype { global, lambda } => {
            let (means, counts) = losses::class_means(&emb, labels);
            let (loss, dmeans) = losses::fedproto_reg(&means, global, *lambda)?;
            parts.regularizer = loss;
            for (i, &y) in labels.iter().enumerate() {
                if let Some(dm) = dmeans.get(&y) {
                    let n = counts[&y] as f64;
                    for (d, g) in demb.row_mut(i).iter_mut().zip(dm) {
                        *d += g / n;
                    }
                }
            }
        }
    }

    let (enc_grads, _) = backward_stack(&params.encoder, &enc_trace, demb)?;
    let mut grads = GradientVector { encoder: enc_grads, head: head_grads };

    if let Regularizer::Proximal { global, mu } = reg {
        let (loss, prox) = losses::proximal_term(params, global, *mu)?;
        parts.regularizer = loss;
        grads.add_scaled(&prox, 1.0)?;
    }
    Ok((parts, grads))
}

fn add_into(dst: &mut Matrix, src: &Matrix) {
    for (d, s) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
        *d += s;
    }
}

/// Heavy-ball SGD: `buf ← momentum·buf + g`, `ω ← ω − lr·buf`.
pub fn sgd_step(params: &mut ModelParams, grads: &GradientVector, lr: f64, momentum: f64) -> Result<()> {
    if lr < 0.0 {
        return Err(Error::invalid("learning rate must be non-negative"));
    }
    if !grads.congruent_with(params) {
        return Err(Error::shape("gradient does not match parameter shapes"));
    }
    let ModelParams { encoder, head, momentum: buffers } = params;
    let weights = dense_slices_mut(encoder).chain(dense_slices_mut(head));
    let bufs = grad_slices_mut(&mut buffers.encoder).chain(grad_slices_mut(&mut buffers.head));
    for ((w, b), g) in weights.zip(bufs).zip(grads.slices()) {
        for ((wv, bv), gv) in w.iter_mut().zip(b.iter_mut()).zip(g) {
            *bv = momentum * *bv + gv;
            *wv -= lr * *bv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Architecture {
        Architecture::mlp(3, &[4], &[], 2)
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = init_params(&tiny(), 7).unwrap();
        let b = init_params(&tiny(), 7).unwrap();
        let c = init_params(&tiny(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.flatten(), c.flatten());
        assert!(a.momentum.flatten().iter().all(|&v| v == 0.0));
        assert!(a.encoder[0].bias.iter().all(|&v| v == 0.0));
        let bound = 1.0 / 3f64.sqrt();
        assert!(a.encoder[0].weights.as_slice().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn init_rejects_bad_chains() {
        let mut arch = tiny();
        arch.encoder[0].in_dim = 0;
        assert!(matches!(init_params(&arch, 1), Err(Error::Shape(_))));
        let mut arch = tiny();
        arch.head[0].in_dim = 5;
        assert!(matches!(init_params(&arch, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_encoder_gives_zero_embeddings() {
        let mut p = init_params(&tiny(), 1).unwrap();
        for s in p.slices_mut() {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]]).unwrap();
        let e = forward_encoder(&p, &x).unwrap();
        assert_eq!((e.rows(), e.cols()), (2, 4));
        assert!(e.as_slice().iter().all(|&v| v == 0.0));
        let logits = forward_head(&p, &e).unwrap();
        assert!(logits.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_relu_encoder_passes_nonnegative_input() {
        let mut p = init_params(&Architecture::mlp(3, &[3], &[], 2), 1).unwrap();
        p.encoder[0].weights = Matrix::identity(3);
        let x = Matrix::from_rows(&[[0.0, 1.5, 2.0], [3.0, 0.25, 0.0]]).unwrap();
        assert_eq!(forward_encoder(&p, &x).unwrap(), x);
    }

    #[test]
    fn hand_set_head_logits() {
        let mut p = init_params(&Architecture::mlp(2, &[2], &[], 2), 1).unwrap();
        p.head[0].weights = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        p.head[0].bias = vec![0.5, -0.5];
        let emb = Matrix::from_rows(&[[1.0, -1.0]]).unwrap();
        // [1, -1] · [[1, 2], [3, 4]] + [0.5, -0.5] = [-1.5, -2.5]
        assert_eq!(forward_head(&p, &emb).unwrap().as_slice(), &[-1.5, -2.5]);
        let batch = Matrix::zeros(5, 2);
        assert_eq!(forward_head(&p, &batch).unwrap().rows(), 5);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = init_params(&tiny(), 1).unwrap();
        assert!(forward_encoder(&p, &Matrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let mut p = init_params(&Architecture::mlp(3, &[4], &[], 10), 3).unwrap();
        for l in &mut p.head {
            l.weights.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        let (loss, _) = backward(&p, &x, &[4], &Regularizer::None).unwrap();
        assert!((loss.total() - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sgd_momentum_recurrence() {
        let mut p = init_params(&tiny(), 2).unwrap();
        let start = p.flatten();
        let mut g = GradientVector::zeros_like(&p);
        sgd_step(&mut p, &g, 0.1, 0.5).unwrap();
        assert_eq!(p.flatten(), start);

        for s in g.slices_mut() {
            s.iter_mut().for_each(|v| *v = 1.0);
        }
        sgd_step(&mut p, &g, 0.0, 0.5).unwrap();
        assert_eq!(p.flatten(), start);
        assert!(p.momentum.flatten().iter().all(|&v| v == 1.0));

        let mut p = init_params(&tiny(), 2).unwrap();
        sgd_step(&mut p, &g, 0.01, 0.5).unwrap();
        let after_one = p.flatten();
        sgd_step(&mut p, &g, 0.01, 0.5).unwrap();
        for (a, b) in after_one.iter().zip(p.flatten()) {
            assert!((a - b - 0.015).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_rejects_mismatched_grads() {
        let mut p = init_params(&tiny(), 2).unwrap();
        let other = init_params(&Architecture::mlp(3, &[5], &[], 2), 2).unwrap();
        let g = GradientVector::zeros_like(&other);
        assert!(sgd_step(&mut p, &g, 0.1, 0.0).is_err());
        let zero = GradientVector::zeros_like(&p);
        assert!(sgd_step(&mut p, &zero, -1.0, 0.0).is_err());
    }
}
