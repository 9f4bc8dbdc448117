//! Prediction by nearest pooled prototype or by the classifier head.

use serde::{Deserialize, Serialize};

use crate::datasets::ClientShard;
use crate::error::{Error, Result};
use crate::losses::NORM_EPS;
use crate::nn::{self, ModelParams};
use crate::prototypes::PrototypePool;
use crate::tensor::{self, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Prototype,
    Classifier,
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = tensor::norm(v);
    if n > NORM_EPS {
        v.iter().map(|x| x / n).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Class whose closest pooled row is nearest to `embedding` (ℓ2).
/// Padding rows are skipped, so padding never changes a prediction.
/// Ties go to the smaller class id.
pub fn nearest_prototype_class(embedding: &[f64], pool: &PrototypePool, normalize: bool) -> Result<usize> {
    if pool.is_empty() {
        return Err(Error::Empty("prototype pool"));
    }
    let query = if normalize { unit(embedding) } else { embedding.to_vec() };
    let mut best: Option<(usize, f64)> = None;
    for (&class, rows) in &pool.per_class {
        let closest = rows
            .iter_rows()
            .take(pool.real_row_count(class))
            .map(|r| {
                if normalize {
                    tensor::sq_dist(&query, &unit(r))
                } else {
                    tensor::sq_dist(&query, r)
                }
            })
            .fold(f64::INFINITY, f64::min);
        if best.map_or(true, |(_, d)| closest < d) {
            best = Some((class, closest));
        }
    }
    Ok(best.map(|(c, _)| c).expect("non-empty pool"))
}

pub fn predict_prototype(params: &ModelParams, pool: &PrototypePool, sample: &[f64], normalize: bool) -> Result<usize> {
    let x = Matrix::from_vec(1, sample.len(), sample.to_vec())?;
    Ok(predict_prototype_batch(params, pool, &x, normalize)?[0])
}

pub fn predict_prototype_batch(
    params: &ModelParams,
    pool: &PrototypePool,
    batch: &Matrix,
    normalize: bool,
) -> Result<Vec<usize>> {
    if pool.is_empty() {
        return Err(Error::Empty("prototype pool"));
    }
    let emb = nn::forward_encoder(params, batch)?;
    emb.iter_rows().map(|e| nearest_prototype_class(e, pool, normalize)).collect()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn predict_classifier(params: &ModelParams, sample: &[f64]) -> Result<usize> {
    let x = Matrix::from_vec(1, sample.len(), sample.to_vec())?;
    Ok(predict_classifier_batch(params, &x)?[0])
}

/// Argmax of the logits per row, ties to the smaller class id.
pub fn predict_classifier_batch(params: &ModelParams, batch: &Matrix) -> Result<Vec<usize>> {
    Ok(nn::forward(params, batch)?.iter_rows().map(argmax).collect())
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    let hits = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub per_client: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation across clients.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Top-1 accuracy of every client on its own test split.
pub fn evaluate(
    params_per_client: &[&ModelParams],
    pool: Option<&PrototypePool>,
    shards: &[ClientShard],
    mode: EvalMode,
    normalize: bool,
) -> Result<Evaluation> {
    if params_per_client.len() != shards.len() {
        return Err(Error::invalid(format!(
            "{} parameter sets for {} clients",
            params_per_client.len(),
            shards.len()
        )));
    }
    if shards.is_empty() {
        return Err(Error::Empty("client shards"));
    }
    let mut per_client = Vec::with_capacity(shards.len());
    for (params, shard) in params_per_client.iter().zip(shards) {
        if shard.test.is_empty() {
            return Err(Error::Empty("client test split"));
        }
        let predicted = match mode {
            EvalMode::Classifier => predict_classifier_batch(params, &shard.test.features)?,
            EvalMode::Prototype => {
                let pool = pool.ok_or(Error::MissingPool)?;
                predict_prototype_batch(params, pool, &shard.test.features, normalize)?
            }
        };
        per_client.push(accuracy(&predicted, &shard.test.labels));
    }
    let (mean, std) = mean_std(&per_client);
    Ok(Evaluation { per_client, mean, std })
}
