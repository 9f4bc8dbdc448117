//! JSON experiment documents.
//!
//! A document carries the [`RunConfig`] fields at top level (`algorithm`, `N`,
//! `T`, `E`, `B`, `lr`, ..., `loss`, `partition`, `seeds`) plus a `dataset`
//! source and optional `model` widths. Only `algorithm`, `N`, `T`, `dataset`
//! and `partition` are required, and `loss.tau` for the contrastive
//! algorithms; everything else falls back to the defaults of
//! [`RunConfig::with_defaults`].
//!
//! ```json
//! {
//!   "algorithm": "mp_fedcl", "N": 5, "T": 60, "K": 2,
//!   "loss": {"tau": 0.07},
//!   "partition": {"dirichlet": {"alpha": 0.05}},
//!   "seeds": {"master": 1},
//!   "dataset": {"kind": "idx", "images": "data/mnist5k/images-idx3-ubyte",
//!               "labels": "data/mnist5k/labels-idx1-ubyte", "subsample": 2000}
//! }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::datasets::{self, ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::federation::{Algorithm, Partition, RunConfig};
use crate::nn::{self, Architecture, ModelParams};
use crate::seeds;

/// Where the samples come from. Relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        subsample: Option<usize>,
    },
    Container {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        subsample: Option<usize>,
    },
    /// Isotropic Gaussian classes, see [`datasets::synth_gaussian`].
    Synthetic {
        num_classes: usize,
        dim: usize,
        per_class: usize,
        separation: f64,
    },
}

/// Hidden widths; input and class counts come from the data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub encoder: Vec<usize>,
    pub head_hidden: Vec<usize>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec { encoder: vec![512, 512], head_hidden: vec![256] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub run: RunConfig,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub model: ModelSpec,
}

const REQUIRED: [&str; 5] = ["algorithm", "N", "T", "dataset", "partition"];
const OPTIONAL: [&str; 13] = [
    "E", "B", "lr", "lr_decay", "momentum", "K", "loss", "seeds", "precision", "kmeans", "eval_mode", "diagnostics",
    "model",
];

fn schema(msg: impl Into<String>) -> Error {
    Error::Schema(msg.into())
}

/// Sets `path` (dot separated) to `value`, which is parsed as JSON when it
/// can be and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, path: &str, value: &str) -> Result<()> {
    let parsed = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    let mut node = doc;
    let mut parts = path.split('.').peekable();
    while let Some(key) = parts.next() {
        if key.is_empty() {
            return Err(schema(format!("bad override path `{path}`")));
        }
        let obj = node.as_object_mut().ok_or_else(|| schema(format!("`{path}` does not address an object")))?;
        if parts.peek().is_none() {
            obj.insert(key.to_string(), parsed);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Err(schema(format!("bad override path `{path}`")))
}

/// Parses `key=value` and applies it.
pub fn apply_set(doc: &mut Value, assignment: &str) -> Result<()> {
    let (k, v) = assignment.split_once('=').ok_or_else(|| schema(format!("override `{assignment}` needs key=value")))?;
    apply_override(doc, k.trim(), v.trim())
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

impl ExperimentConfig {
    /// Validates a parsed document and fills in defaults.
    pub fn from_value(doc: Value) -> Result<Self> {
        let obj = doc.as_object().ok_or_else(|| schema("config must be a JSON object"))?;
        let missing: Vec<&str> = REQUIRED.iter().copied().filter(|k| !obj.contains_key(*k)).collect();
        if !missing.is_empty() {
            return Err(schema(format!("missing key: {}", missing.join(", "))));
        }
        if let Some(k) = obj.keys().find(|k| !REQUIRED.contains(&k.as_str()) && !OPTIONAL.contains(&k.as_str())) {
            return Err(schema(format!("unknown key: {k}")));
        }
        let algorithm: Algorithm = serde_json::from_value(obj["algorithm"].clone())
            .map_err(|e| schema(format!("algorithm: {e}")))?;
        if algorithm.is_contrastive() && obj.get("loss").and_then(|l| l.get("tau")).is_none() {
            return Err(schema("missing key: loss.tau"));
        }

        let placeholder = RunConfig::with_defaults(algorithm, 1, 1, Partition::Dirichlet { alpha: 1.0 });
        let mut full = serde_json::to_value(&placeholder)?;
        // enum-valued: the document's variant replaces the placeholder wholesale
        full.as_object_mut().map(|o| o.remove("partition"));
        merge(&mut full, doc);
        let mut cfg: ExperimentConfig = serde_json::from_value(full).map_err(|e| schema(e.to_string()))?;
        if cfg.run.algorithm == Algorithm::SpFedcl {
            cfg.run.k = 1;
        }
        cfg.run.validate().map_err(|e| schema(e.to_string()))?;
        if cfg.model.encoder.is_empty() {
            return Err(schema("model.encoder needs at least one layer"));
        }
        Ok(cfg)
    }

    pub fn from_json_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: Value = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
        for o in overrides {
            apply_set(&mut doc, o)?;
        }
        Self::from_value(doc)
    }

    /// Reads a config file; relative dataset paths become relative to its directory.
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::from_json_str(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetSource::Idx { images, labels, .. } => {
                fix(images);
                fix(labels);
            }
            DatasetSource::Container { path, .. } => fix(path),
            DatasetSource::Synthetic { .. } => {}
        }
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn master_seed(&self) -> u64 {
        self.run.seeds.master
    }

    /// Loads (and optionally subsamples) the dataset.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let seed = self.master_seed();
        let (ds, sub) = match &self.dataset {
            DatasetSource::Idx { images, labels, subsample } => (datasets::load_idx(images, labels)?, *subsample),
            DatasetSource::Container { path, subsample } => {
                (datasets::read_container(fs::File::open(path)?)?, *subsample)
            }
            DatasetSource::Synthetic { num_classes, dim, per_class, separation } => {
                (datasets::synth_gaussian(*num_classes, *dim, *per_class, *separation, seed)?, None)
            }
        };
        match sub {
            Some(n) => datasets::subsample(&ds, n, seed),
            None => Ok(ds),
        }
    }

    /// Splits `ds` among the clients according to `partition`.
    pub fn build_shards(&self, ds: &Dataset) -> Result<Vec<ClientShard>> {
        let seed = seeds::derive(self.master_seed(), &[seeds::TAG_PARTITION]);
        match &self.run.partition {
            Partition::Dirichlet { alpha } => datasets::partition_dirichlet(ds, self.run.num_clients, *alpha, seed),
            Partition::FeatureSkew { transforms } => {
                let t = transforms
                    .clone()
                    .unwrap_or_else(|| datasets::default_domains(self.run.num_clients, self.master_seed()));
                datasets::partition_feature_skew(ds, &t, seed)
            }
        }
    }

    pub fn architecture(&self, ds: &Dataset) -> Architecture {
        Architecture::mlp(ds.dim(), &self.model.encoder, &self.model.head_hidden, ds.num_classes)
    }

    /// The shared starting model ω⁰.
    pub fn initial_params(&self, ds: &Dataset) -> Result<ModelParams> {
        nn::init_params(&self.architecture(ds), seeds::derive(self.master_seed(), &[seeds::TAG_INIT]))
    }
}
