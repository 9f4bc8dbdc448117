//! Round-based federated training for Local, FedAvg, FedProx, FedProto,
//! SP-FedCL and MP-FedCL.
//!
//! Each round the server broadcasts its model (or each client resumes its own,
//! for the algorithms that never average), clients run `E` local epochs of
//! momentum SGD on cross-entropy plus their algorithm's regularizer, and the
//! prototype algorithms cluster per-class embeddings of the updated encoder.
//! The server then averages parameters weighted by shard size and rebuilds the
//! prototype pool. Client work within a round is independent and may run on
//! several threads; results are gathered in client order so the outcome does
//! not depend on the thread count.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{ClientShard, DomainTransform};
use crate::diagnostics::{self, BoundInputs, ConvergenceReport};
use crate::error::{Error, Result};
use crate::inference::{self, EvalMode, Evaluation};
use crate::kmeans::KMeansConfig;
use crate::losses::{LossConfig, Regularizer};
use crate::nn::{self, GradientVector, ModelParams, Precision};
use crate::prototypes::{self, LocalPrototypes, PrototypePool};
use crate::seeds;
use crate::tensor::{self, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Local,
    Fedavg,
    Fedprox,
    Fedproto,
    SpFedcl,
    MpFedcl,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Local,
        Algorithm::Fedavg,
        Algorithm::Fedprox,
        Algorithm::Fedproto,
        Algorithm::SpFedcl,
        Algorithm::MpFedcl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Local => "local",
            Algorithm::Fedavg => "fedavg",
            Algorithm::Fedprox => "fedprox",
            Algorithm::Fedproto => "fedproto",
            Algorithm::SpFedcl => "sp_fedcl",
            Algorithm::MpFedcl => "mp_fedcl",
        }
    }

    /// Whether the server averages client parameters each round.
    pub fn averages_params(self) -> bool {
        matches!(self, Algorithm::Fedavg | Algorithm::Fedprox | Algorithm::SpFedcl | Algorithm::MpFedcl)
    }

    /// Whether clients send prototypes and the server keeps a pool.
    pub fn uses_prototypes(self) -> bool {
        matches!(self, Algorithm::Fedproto | Algorithm::SpFedcl | Algorithm::MpFedcl)
    }

    pub fn is_contrastive(self) -> bool {
        matches!(self, Algorithm::SpFedcl | Algorithm::MpFedcl)
    }

    pub fn default_eval_mode(self) -> EvalMode {
        if self.uses_prototypes() {
            EvalMode::Prototype
        } else {
            EvalMode::Classifier
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Dirichlet {
        alpha: f64,
    },
    /// One transform per client; omitted means [`crate::datasets::default_domains`].
    FeatureSkew {
        #[serde(default)]
        transforms: Option<Vec<DomainTransform>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub enabled: bool,
    /// Smoothness constant of the local loss; not estimated.
    pub l1: f64,
    /// Training rows per client used to probe the embedding Lipschitz ratio.
    pub probe_size: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig { enabled: false, l1: 10.0, probe_size: 32 }
    }
}

/// Everything needed to train once the client shards exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    #[serde(rename = "N")]
    pub num_clients: usize,
    #[serde(rename = "T")]
    pub rounds: usize,
    #[serde(rename = "E")]
    pub local_epochs: usize,
    #[serde(rename = "B")]
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub momentum: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub loss: LossConfig,
    pub partition: Partition,
    pub seeds: Seeds,
    pub precision: Precision,
    pub kmeans: KMeansConfig,
    /// Overrides the algorithm's default evaluation mode.
    pub eval_mode: Option<EvalMode>,
    pub diagnostics: DiagnosticsConfig,
}

impl RunConfig {
    /// Learning rate 0.01 decayed by 0.95 per round, batch 32, one local
    /// epoch, momentum 0.5, τ = 0.07, K = 2.
    pub fn with_defaults(algorithm: Algorithm, num_clients: usize, rounds: usize, partition: Partition) -> Self {
        RunConfig {
            algorithm,
            num_clients,
            rounds,
            local_epochs: 1,
            batch_size: 32,
            lr: 0.01,
            lr_decay: 0.95,
            momentum: 0.5,
            k: 2,
            loss: LossConfig::default(),
            partition,
            seeds: Seeds { master: 0 },
            precision: Precision::F64,
            kmeans: KMeansConfig::default(),
            eval_mode: None,
            diagnostics: DiagnosticsConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 || self.rounds == 0 || self.local_epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("N, T, E and B must all be at least 1"));
        }
        if self.k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        if !(self.lr >= 0.0) || !(self.lr_decay > 0.0) || !(self.momentum >= 0.0) {
            return Err(Error::invalid("lr and momentum must be non-negative, lr_decay positive"));
        }
        self.loss.validate()?;
        if self.eval_mode == Some(EvalMode::Prototype) && !self.algorithm.uses_prototypes() {
            return Err(Error::invalid(format!("{} keeps no prototype pool to evaluate with", self.algorithm)));
        }
        match &self.partition {
            Partition::Dirichlet { alpha } if !(*alpha > 0.0) => Err(Error::invalid("alpha must be positive")),
            Partition::FeatureSkew { transforms: Some(t) } if t.len() != self.num_clients => {
                Err(Error::invalid(format!("{} transforms for {} clients", t.len(), self.num_clients)))
            }
            _ => Ok(()),
        }
    }

    /// Prototypes per class each client computes: 1 for SP-FedCL and FedProto.
    pub fn prototype_k(&self) -> usize {
        match self.algorithm {
            Algorithm::SpFedcl | Algorithm::Fedproto => 1,
            _ => self.k,
        }
    }

    /// Learning rate for 1-based `round`.
    pub fn lr_at(&self, round: usize) -> f64 {
        self.lr * self.lr_decay.powi(round.saturating_sub(1) as i32)
    }

    pub fn eval_mode(&self) -> EvalMode {
        self.eval_mode.unwrap_or_else(|| self.algorithm.default_eval_mode())
    }

    /// Prototype distances are taken between unit vectors exactly when the
    /// training loss normalised embeddings.
    pub fn normalize_for_inference(&self) -> bool {
        self.algorithm.is_contrastive() && self.loss.use_contrastive && self.loss.normalize_embeddings
    }
}

/// What a client returns at the end of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: ModelParams,
    pub prototypes: Option<LocalPrototypes>,
    pub data_size: usize,
    pub train_loss: f64,
    /// Samples whose class was missing from the pool during this round.
    pub skipped_positives: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientMetrics {
    pub client_id: usize,
    pub train_loss: f64,
    pub eval_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundState {
    pub round: usize,
    pub global_params: ModelParams,
    pub pool: PrototypePool,
    pub metrics: Vec<ClientMetrics>,
}

/// Outcome of one round, as persisted to the metrics files.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub lr: f64,
    pub clients: Vec<ClientMetrics>,
    /// Shard-size weighted mean of client training losses.
    pub mean_train_loss: f64,
    pub evaluation: Evaluation,
    pub convergence: Option<ConvergenceReport>,
}

fn regularizer<'a>(
    config: &RunConfig,
    broadcast: &'a ModelParams,
    pool: &'a PrototypePool,
    class_means: &'a std::collections::BTreeMap<usize, Vec<f64>>,
) -> Result<Regularizer<'a>> {
    Ok(match config.algorithm {
        Algorithm::Local | Algorithm::Fedavg => Regularizer::None,
        Algorithm::Fedprox => Regularizer::Proximal { global: broadcast, mu: config.loss.mu_prox },
        Algorithm::Fedproto if pool.is_empty() => Regularizer::None,
        Algorithm::Fedproto => Regularizer::Prototype { global: class_means, lambda: config.loss.lambda_proto },
        // the first round has no pool yet
        Algorithm::SpFedcl | Algorithm::MpFedcl if !config.loss.use_contrastive || pool.is_empty() => {
            Regularizer::None
        }
        Algorithm::SpFedcl | Algorithm::MpFedcl => Regularizer::contrastive(Some(pool), &config.loss)?,
    })
}

/// One client's work for a round: `E` epochs of shuffled mini-batch SGD from
/// `params_in`, then per-class clustering of the updated embeddings when the
/// algorithm exchanges prototypes.
pub fn local_update(
    client: &ClientShard,
    params_in: &ModelParams,
    pool: &PrototypePool,
    config: &RunConfig,
    round: usize,
    client_seed: u64,
    warm: Option<&LocalPrototypes>,
) -> Result<ClientUpdate> {
    let train = &client.train;
    if train.is_empty() {
        return Err(Error::Empty("client training split"));
    }
    let class_means = pool.class_means();
    let reg = regularizer(config, params_in, pool, &class_means)?;
    let lr = config.lr_at(round);
    let mut params = params_in.clone();
    let mut rng = seeds::rng(client_seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut loss_sum = 0.0;
    let mut skipped = 0;
    for _ in 0..config.local_epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = train.features.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let (parts, grads) = nn::backward(&params, &x, &y, &reg)?;
            if !parts.total().is_finite() || !grads.is_finite() {
                return Err(Error::NonFinite { round, client: client.client_id, batch: b });
            }
            nn::sgd_step(&mut params, &grads, lr, config.momentum)?;
            params.quantize(config.precision);
            loss_sum += parts.total() * chunk.len() as f64;
            skipped += parts.skipped;
        }
    }
    let prototypes = if config.algorithm.uses_prototypes() {
        let emb = nn::forward_encoder(&params, &train.features)?;
        let by_class = prototypes::embeddings_by_class(&emb, &train.labels);
        let warm = warm.filter(|_| config.kmeans.warm_start);
        Some(prototypes::compute_local_prototypes(
            client.client_id,
            &by_class,
            config.prototype_k(),
            &config.kmeans,
            seeds::derive(client_seed, &[seeds::TAG_KMEANS]),
            warm,
        )?)
    } else {
        None
    };
    Ok(ClientUpdate {
        client_id: client.client_id,
        params,
        prototypes,
        data_size: train.len(),
        train_loss: loss_sum / (config.local_epochs * train.len()) as f64,
        skipped_positives: skipped,
    })
}

/// Weighted average with weights `w_i / Σw`; momentum buffers come back zeroed.
pub fn weighted_average(models: &[(&ModelParams, f64)]) -> Result<ModelParams> {
    let (first, _) = models.first().ok_or(Error::Empty("models to average"))?;
    for (m, _) in &models[1..] {
        first.check_congruent(m)?;
    }
    let total: f64 = models.iter().map(|(_, w)| w).sum();
    if !(total > 0.0) {
        return Err(Error::invalid("averaging weights must have a positive sum"));
    }
    let mut out = (*first).clone();
    for s in out.slices_mut() {
        s.iter_mut().for_each(|v| *v = 0.0);
    }
    for (m, w) in models {
        let share = w / total;
        for (dst, src) in out.slices_mut().into_iter().zip(m.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += share * s;
            }
        }
    }
    out.reset_momentum();
    Ok(out)
}

/// Shard-size weighted parameter average of the round's updates.
pub fn aggregate_params(updates: &[ClientUpdate]) -> Result<ModelParams> {
    let models: Vec<(&ModelParams, f64)> = updates.iter().map(|u| (&u.params, u.data_size as f64)).collect();
    weighted_average(&models)
}

/// Drives training over a fixed set of client shards.
pub struct Simulation {
    config: RunConfig,
    shards: Vec<ClientShard>,
    state: RoundState,
    /// Parameters each client holds between rounds (its own model for the
    /// non-averaging algorithms, its latest local update otherwise).
    client_params: Vec<ModelParams>,
    client_protos: Vec<Option<LocalPrototypes>>,
    prev_global_loss: Option<f64>,
    pool_threads: rayon::ThreadPool,
}

impl Simulation {
    /// `initial` is the shared starting model; `workers` bounds client parallelism.
    pub fn new(config: RunConfig, shards: Vec<ClientShard>, initial: ModelParams, workers: usize) -> Result<Self> {
        config.validate()?;
        if shards.len() != config.num_clients {
            return Err(Error::invalid(format!(
                "{} shards for N = {}",
                shards.len(),
                config.num_clients
            )));
        }
        if let Some(s) = shards.iter().find(|s| s.train.dim() != initial.architecture().input_dim()) {
            return Err(Error::shape(format!("client {} features do not fit the model input", s.client_id)));
        }
        let pool_threads = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::invalid(e.to_string()))?;
        let n = shards.len();
        Ok(Simulation {
            client_params: vec![initial.clone(); n],
            client_protos: vec![None; n],
            state: RoundState { round: 0, global_params: initial, pool: PrototypePool::default(), metrics: vec![] },
            config,
            shards,
            prev_global_loss: None,
            pool_threads,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn state(&self) -> &RoundState {
        &self.state
    }

    pub fn shards(&self) -> &[ClientShard] {
        &self.shards
    }

    pub fn client_params(&self) -> &[ModelParams] {
        &self.client_params
    }

    pub fn is_finished(&self) -> bool {
        self.state.round >= self.config.rounds
    }

    fn broadcast_for(&self, client: usize) -> &ModelParams {
        if self.config.algorithm.averages_params() {
            &self.state.global_params
        } else {
            &self.client_params[client]
        }
    }

    /// Full-shard gradients at each client's starting point, with the losses.
    fn full_gradients(&self) -> Result<Vec<(GradientVector, f64)>> {
        let class_means = self.state.pool.class_means();
        self.pool_threads.install(|| {
            self.shards
                .par_iter()
                .map(|s| {
                    let start = self.broadcast_for(s.client_id);
                    let reg = regularizer(&self.config, start, &self.state.pool, &class_means)?;
                    let (parts, g) = nn::backward(start, &s.train.features, &s.train.labels, &reg)?;
                    Ok((g, parts.total()))
                })
                .collect()
        })
    }

    /// Runs one global round and returns its record.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        if self.is_finished() {
            return Err(Error::invalid("all rounds already ran"));
        }
        let round = self.state.round + 1;
        let cfg = &self.config;
        let lr = cfg.lr_at(round);
        let diagnose = cfg.diagnostics.enabled && cfg.num_clients >= 2;
        let full = if diagnose { Some(self.full_gradients()?) } else { None };

        let updates: Vec<ClientUpdate> = self.pool_threads.install(|| {
            self.shards
                .par_iter()
                .map(|s| {
                    let id = s.client_id;
                    local_update(
                        s,
                        self.broadcast_for(id),
                        &self.state.pool,
                        &self.config,
                        round,
                        seeds::client_round(self.config.seeds.master, id, round),
                        self.client_protos[id].as_ref(),
                    )
                })
                .collect::<Result<_>>()
        })?;

        let convergence = match &full {
            Some(full) => Some(self.convergence_report(round, lr, full, &updates)?),
            None => None,
        };

        let cfg = &self.config;
        if cfg.algorithm.averages_params() {
            let mut global = aggregate_params(&updates)?;
            global.quantize(cfg.precision);
            self.state.global_params = global;
        }
        if cfg.algorithm.uses_prototypes() {
            let protos: Vec<&LocalPrototypes> = updates.iter().filter_map(|u| u.prototypes.as_ref()).collect();
            self.state.pool = prototypes::aggregate_pool(
                &protos,
                cfg.num_clients,
                cfg.prototype_k(),
                self.shards[0].train.num_classes,
                round,
            )?;
        } else {
            self.state.pool.round = round;
        }

        let mode = cfg.eval_mode();
        let eval_params: Vec<&ModelParams> = updates
            .iter()
            .map(|u| match mode {
                EvalMode::Classifier if cfg.algorithm.averages_params() => &self.state.global_params,
                _ => &u.params,
            })
            .collect();
        let evaluation = inference::evaluate(
            &eval_params,
            Some(&self.state.pool),
            &self.shards,
            mode,
            cfg.normalize_for_inference(),
        )?;

        let total: usize = updates.iter().map(|u| u.data_size).sum();
        let mean_train_loss = updates.iter().map(|u| u.train_loss * u.data_size as f64).sum::<f64>() / total as f64;
        let clients: Vec<ClientMetrics> = updates
            .iter()
            .zip(&evaluation.per_client)
            .map(|(u, &acc)| ClientMetrics { client_id: u.client_id, train_loss: u.train_loss, eval_acc: acc })
            .collect();
        let skipped: usize = updates.iter().map(|u| u.skipped_positives).sum();
        if skipped > 0 {
            log::info!("round {round}: {skipped} samples had no positive prototypes in the pool");
        }

        for u in updates {
            let id = u.client_id;
            if u.prototypes.is_some() {
                self.client_protos[id] = u.prototypes;
            }
            self.client_params[id] = u.params;
        }
        self.state.round = round;
        self.state.metrics = clients.clone();
        Ok(RoundRecord { round, lr, clients, mean_train_loss, evaluation, convergence })
    }

    fn convergence_report(
        &mut self,
        round: usize,
        lr: f64,
        full: &[(GradientVector, f64)],
        updates: &[ClientUpdate],
    ) -> Result<ConvergenceReport> {
        let cfg = &self.config;
        let grads: Vec<GradientVector> = full.iter().map(|(g, _)| g.clone()).collect();
        let weights: Vec<f64> = self.shards.iter().map(|s| s.train.len() as f64).collect();
        let consts = diagnostics::estimate_round_constants(&grads, &weights)?;
        let total: f64 = weights.iter().sum();
        let global_loss: f64 = full.iter().zip(&weights).map(|((_, l), w)| l * w / total).sum();
        let loss_decreased = self.prev_global_loss.map(|prev| global_loss < prev);
        self.prev_global_loss = Some(global_loss);

        let mut l2_hat: Option<f64> = None;
        let mut norm_sum = 0.0;
        let mut norm_count = 0usize;
        for (s, u) in self.shards.iter().zip(updates) {
            let probe_rows: Vec<usize> = (0..s.train.len().min(cfg.diagnostics.probe_size)).collect();
            let probe = s.train.features.select_rows(&probe_rows);
            if let Some(r) = diagnostics::estimate_embedding_lipschitz(self.broadcast_for(s.client_id), &u.params, &probe)? {
                l2_hat = Some(l2_hat.map_or(r, |m: f64| m.max(r)));
            }
            let emb: Matrix = nn::forward_encoder(&u.params, &probe)?;
            norm_sum += emb.iter_rows().map(tensor::norm).sum::<f64>();
            norm_count += emb.rows();
        }
        let mean_norm = if norm_count > 0 { norm_sum / norm_count as f64 } else { 0.0 };
        let num_classes = self.shards[0].train.num_classes;
        let a_p = num_classes.saturating_sub(1);
        let eta_bound = match (consts.delta_hat, l2_hat) {
            (Some(delta), Some(l2)) => Some(diagnostics::lr_bound(&BoundInputs {
                sigma2: consts.sigma2_hat,
                tau: cfg.loss.tau,
                num_clients: cfg.num_clients,
                a_p,
                l2,
                g_v_sum: consts.g_hat * mean_norm * cfg.num_clients as f64,
                l1: cfg.diagnostics.l1,
                grad_norm_sq: consts.global_grad_norm * consts.global_grad_norm,
                delta_sq: delta * delta,
            })),
            _ => None,
        };
        let decreasing_ok = eta_bound.is_some_and(|b| b > 0.0 && lr <= b);
        Ok(ConvergenceReport {
            round,
            global_grad_norm: consts.global_grad_norm,
            delta_hat: consts.delta_hat,
            sigma2_hat: consts.sigma2_hat,
            g_hat: consts.g_hat,
            a_p,
            l2_hat,
            eta_bound: eta_bound.filter(|b| b.is_finite()),
            eta_used: lr,
            decreasing_ok,
            loss_decreased,
        })
    }
}

/// Final state of a completed run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub records: Vec<RoundRecord>,
    pub final_global: ModelParams,
    pub final_client_params: Vec<ModelParams>,
    pub final_pool: PrototypePool,
}

impl RunArtifacts {
    pub fn final_evaluation(&self) -> &Evaluation {
        &self.records.last().expect("at least one round").evaluation
    }
}

/// Runs all `T` rounds, calling `on_round` after each.
pub fn run_training(
    config: &RunConfig,
    shards: Vec<ClientShard>,
    initial: ModelParams,
    workers: usize,
    mut on_round: impl FnMut(&RoundRecord) -> Result<()>,
) -> Result<RunArtifacts> {
    let mut sim = Simulation::new(config.clone(), shards, initial, workers)?;
    let mut records = Vec::with_capacity(config.rounds);
    while !sim.is_finished() {
        let rec = sim.run_round()?;
        on_round(&rec)?;
        records.push(rec);
    }
    Ok(RunArtifacts {
        records,
        final_global: sim.state.global_params,
        final_client_params: sim.client_params,
        final_pool: sim.state.pool,
    })
}
