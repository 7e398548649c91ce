//! Task contracts shared by every model.

use std::fmt;
use std::str::FromStr;

use pots_core::{DatasetAccess, TimeSeriesSample};

use crate::artifact::ModelArtifact;
use crate::error::{ModelError, Result};

/// Samples are pulled from a dataset in chunks of this size during inference.
pub(crate) const INFERENCE_CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Locf,
    Mean,
    SaitsLite,
    GrudLite,
    TwoStageKMeans,
    Tmf,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Locf,
        ModelKind::Mean,
        ModelKind::SaitsLite,
        ModelKind::GrudLite,
        ModelKind::TwoStageKMeans,
        ModelKind::Tmf,
    ];

    /// Tag stored in model artifacts.
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Locf => "locf",
            ModelKind::Mean => "mean",
            ModelKind::SaitsLite => "saits_lite",
            ModelKind::GrudLite => "grud_lite",
            ModelKind::TwoStageKMeans => "twostage_kmeans",
            ModelKind::Tmf => "tmf",
        }
    }

    pub fn tasks(self) -> &'static [Task] {
        match self {
            ModelKind::Locf | ModelKind::Mean | ModelKind::SaitsLite => &[Task::Impute],
            ModelKind::GrudLite => &[Task::Classify],
            ModelKind::TwoStageKMeans => &[Task::Cluster],
            ModelKind::Tmf => &[Task::Forecast],
        }
    }

    pub fn supports(self, task: Task) -> bool {
        self.tasks().contains(&task)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| ModelError::format(format!("unknown model kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Impute,
    Classify,
    Cluster,
    Forecast,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Impute => "impute",
            Task::Classify => "classify",
            Task::Cluster => "cluster",
            Task::Forecast => "forecast",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        [Task::Impute, Task::Classify, Task::Cluster, Task::Forecast]
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| ModelError::invalid(format!("unknown task {s:?}")))
    }
}

/// The four task contracts. A model overrides the ones it implements; the
/// rest report [`ModelError::UnsupportedTask`].
///
/// Value grids are row-major `T×D` per sample. Implementations of
/// [`impute`](PotsModel::impute) copy observed cells bitwise.
pub trait PotsModel: Send + Sync {
    fn kind(&self) -> ModelKind;

    fn n_features(&self) -> usize;

    /// `Some(T)` when the model only accepts series of exactly `T` steps.
    fn n_steps(&self) -> Option<usize> {
        None
    }

    fn impute(&self, data: &dyn DatasetAccess) -> Result<Vec<Vec<f64>>> {
        let _ = data;
        Err(self.unsupported(Task::Impute))
    }

    /// One probability row per sample.
    fn classify(&self, data: &dyn DatasetAccess) -> Result<Vec<Vec<f64>>> {
        let _ = data;
        Err(self.unsupported(Task::Classify))
    }

    fn cluster(&self, data: &dyn DatasetAccess) -> Result<Vec<usize>> {
        let _ = data;
        Err(self.unsupported(Task::Cluster))
    }

    /// Row-major `horizon×D` predictions per sample.
    fn forecast(&self, data: &dyn DatasetAccess, horizon: usize) -> Result<Vec<Vec<f64>>> {
        let _ = (data, horizon);
        Err(self.unsupported(Task::Forecast))
    }

    fn to_artifact(&self) -> ModelArtifact;

    fn unsupported(&self, task: Task) -> ModelError {
        ModelError::UnsupportedTask {
            kind: self.kind(),
            task,
        }
    }
}

/// Rejects datasets whose shape the model cannot consume.
pub fn check_compatible(model: &dyn PotsModel, data: &dyn DatasetAccess) -> Result<()> {
    if data.n_features() != model.n_features() {
        return Err(ModelError::invalid(format!(
            "{} model expects {} features, dataset has {}",
            model.kind(),
            model.n_features(),
            data.n_features()
        )));
    }
    if let Some(t) = model.n_steps() {
        if data.n_steps() != t {
            return Err(ModelError::invalid(format!(
                "{} model expects {t} steps, dataset has {}",
                model.kind(),
                data.n_steps()
            )));
        }
    }
    Ok(())
}

/// Calls `f` on consecutive chunks of `data` in index order.
pub(crate) fn for_each_chunk(
    data: &dyn DatasetAccess,
    mut f: impl FnMut(Vec<TimeSeriesSample>) -> Result<()>,
) -> Result<()> {
    let n = data.len();
    let mut start = 0;
    while start < n {
        let end = (start + INFERENCE_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        f(data.fetch(&idx)?)?;
        start = end;
    }
    Ok(())
}

/// Overwrites `completed` with the observed cells of `sample`.
pub(crate) fn restore_observed(sample: &TimeSeriesSample, completed: &mut [f64]) {
    for ((out, &v), &m) in completed.iter_mut().zip(sample.values()).zip(sample.mask()) {
        if m {
            *out = v;
        }
    }
}
