//! Run settings layered as flags > config file > defaults.
//!
//! The config file is one flat JSON object whose keys mirror the long flag
//! names with `_` for `-`. A `params` object holds model hyperparameters
//! as scalars. One file may drive every pipeline stage; each stage reads
//! only the keys it needs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pots_models::{ModelKind, SelectionMetric, Task, TrainConfig};
use serde_json::Value;

use crate::error::{CliError, Result};

/// Per-stage offsets added to the global seed, so any stage can be re-run
/// on its own and draw the same randomness it drew inside the pipeline.
pub mod seed_offset {
    /// Synthetic data generation.
    pub const GENERATE: u64 = 0;
    /// Artificial missingness in `corrupt`.
    pub const CORRUPT: u64 = 1;
    /// Validation hold-out drawn by `train` when `--val` is absent.
    pub const HOLDOUT: u64 = 2;
    /// Parameter initialization and k-means++ seeding.
    pub const INIT: u64 = 3;
    /// Epoch shuffles and per-batch randomness.
    pub const TRAIN: u64 = 4;
}

/// Every setting any stage understands; `None` means "not given here".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub task: Option<Task>,
    pub model: Option<ModelKind>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub patience: Option<usize>,
    pub selection_metric: Option<SelectionMetric>,
    pub missing_rate: Option<f64>,
    pub horizon: Option<usize>,
    pub n_samples: Option<usize>,
    pub n_steps: Option<usize>,
    pub n_features: Option<usize>,
    pub n_classes: Option<usize>,
    pub data: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub artifact: Option<PathBuf>,
    pub originals: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub params: BTreeMap<String, String>,
}

macro_rules! prefer {
    ($hi:ident, $lo:ident; $($field:ident),*) => {
        Settings {
            $($field: $hi.$field.or($lo.$field),)*
            params: {
                let mut p = $lo.params;
                p.extend($hi.params);
                p
            },
        }
    };
}

impl Settings {
    /// `self` wins wherever both layers set a value; params merge per key.
    pub fn over(self, lower: Settings) -> Settings {
        let hi = self;
        prefer!(hi, lower; task, model, seed, workers, epochs, batch_size, lr, patience,
            selection_metric, missing_rate, horizon, n_samples, n_steps, n_features,
            n_classes, data, val, artifact, originals, out)
    }

    pub fn from_file(path: &Path) -> Result<Settings> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("--config {}: {e}", path.display())))?;
        Self::from_json(&text)
            .map_err(|e| CliError::usage(format!("--config {}: {e}", path.display())))
    }

    pub fn from_json(text: &str) -> std::result::Result<Settings, String> {
        let root: Value = serde_json::from_str(text).map_err(|e| format!("invalid JSON: {e}"))?;
        let Value::Object(map) = root else {
            return Err("expected a JSON object at the top level".into());
        };
        let mut s = Settings::default();
        for (key, v) in map {
            let bad = |what: &str| format!("key {key:?}: expected {what}");
            let uint = || v.as_u64().ok_or_else(|| bad("a non-negative integer"));
            let size = || uint().map(|x| x as usize);
            let real = || v.as_f64().ok_or_else(|| bad("a number"));
            let text = || v.as_str().ok_or_else(|| bad("a string"));
            let path = || text().map(PathBuf::from);
            match key.as_str() {
                "task" => s.task = Some(text()?.parse().map_err(|e| format!("key \"task\": {e}"))?),
                "model" => {
                    s.model = Some(text()?.parse().map_err(|e| format!("key \"model\": {e}"))?)
                }
                "seed" => s.seed = Some(uint()?),
                "workers" => s.workers = Some(size()?),
                "epochs" => s.epochs = Some(size()?),
                "batch_size" => s.batch_size = Some(size()?),
                "lr" => s.lr = Some(real()?),
                "patience" => s.patience = Some(size()?),
                "selection_metric" => s.selection_metric = Some(parse_selection(text()?)?),
                "missing_rate" => s.missing_rate = Some(real()?),
                "horizon" => s.horizon = Some(size()?),
                "n_samples" => s.n_samples = Some(size()?),
                "n_steps" => s.n_steps = Some(size()?),
                "n_features" => s.n_features = Some(size()?),
                "n_classes" => s.n_classes = Some(size()?),
                "data" => s.data = Some(path()?),
                "val" => s.val = Some(path()?),
                "artifact" => s.artifact = Some(path()?),
                "originals" => s.originals = Some(path()?),
                "out" => s.out = Some(path()?),
                "params" => {
                    let Value::Object(params) = &v else {
                        return Err(bad("an object of hyperparameters"));
                    };
                    for (name, pv) in params {
                        let rendered = match pv {
                            Value::String(x) => x.clone(),
                            Value::Number(x) => x.to_string(),
                            _ => return Err(format!("params.{name}: expected a number or string")),
                        };
                        s.params.insert(name.clone(), rendered);
                    }
                }
                _ => return Err(format!("unknown key {key:?}")),
            }
        }
        Ok(s)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// The stage seed: global seed plus the stage offset, wrapping.
    pub fn stage_seed(&self, offset: u64) -> u64 {
        self.seed().wrapping_add(offset)
    }

    pub fn horizon(&self) -> usize {
        self.horizon.unwrap_or(1)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let config = TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            learning_rate: self.lr.unwrap_or(d.learning_rate),
            patience: self.patience.unwrap_or(d.patience),
            seed: self.stage_seed(seed_offset::TRAIN),
            workers: self.workers.unwrap_or(d.workers),
            selection_metric: self.selection_metric.unwrap_or(d.selection_metric),
        };
        config
            .validate()
            .map_err(|e| CliError::usage(format!("training flags: {e}")))?;
        Ok(config)
    }

    /// Named path setting or a usage error naming its flag.
    pub fn require_path<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| CliError::usage(format!("{flag} is required (flag or config key)")))
    }
}

pub fn parse_selection(s: &str) -> std::result::Result<SelectionMetric, String> {
    [SelectionMetric::ValLoss, SelectionMetric::ValAccuracy]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| {
            format!("unknown selection metric {s:?} (expected val_loss or val_accuracy)")
        })
}

/// Parses a `--param key=value` flag.
pub fn parse_param(s: &str) -> std::result::Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(format!("expected key=value, got {s:?}")),
    }
}

/// Typed, consuming view of hyperparameters; leftovers are reported so a
/// misspelled name never silently falls back to a default.
pub struct Params {
    owner: ModelKind,
    values: BTreeMap<String, String>,
}

impl Params {
    pub fn new(owner: ModelKind, values: BTreeMap<String, String>) -> Self {
        Params { owner, values }
    }

    pub fn get<T: std::str::FromStr>(&mut self, name: &str, default: T) -> Result<T> {
        match self.values.remove(name) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| {
                CliError::usage(format!(
                    "--param {name}={raw}: invalid value for {}",
                    self.owner
                ))
            }),
        }
    }

    pub fn take(&mut self, name: &str) -> Option<String> {
        self.values.remove(name)
    }

    pub fn finish(self) -> Result<()> {
        match self.values.keys().next() {
            None => Ok(()),
            Some(k) => Err(CliError::usage(format!(
                "--param {k}: not a hyperparameter of {}",
                self.owner
            ))),
        }
    }
}
