//! Models for partially-observed time series behind one set of task
//! contracts ([`PotsModel`]): imputation ([`LocfImputer`], [`MeanImputer`],
//! [`SaitsLite`]), classification ([`GrudLite`]), clustering
//! ([`TwoStageKMeans`]) and forecasting ([`TmfModel`]).
//!
//! Gradient-trained models implement [`Trainable`] and are fitted with
//! [`fit`] or [`parallel_fit`]; every model round-trips through the
//! `.pmdl` artifact ([`save_model`], [`load_model`]).

pub mod api;
pub mod artifact;
mod error;
pub mod grud;
mod init;
pub mod kmeans;
pub mod locf;
pub mod mean;
pub mod saits;
pub mod tmf;
pub mod train;

pub use api::{check_compatible, ModelKind, PotsModel, Task};
pub use artifact::{
    load_artifact, load_model, model_from_artifact, save_model, HyperValue, ModelArtifact,
};
pub use error::{ModelError, Result};
pub use grud::{GrudConfig, GrudLite};
pub use kmeans::{kmeans_fit, KMeansConfig, KMeansFit, TwoStageKMeans};
pub use locf::LocfImputer;
pub use mean::MeanImputer;
pub use saits::{SaitsConfig, SaitsLite};
pub use tmf::{tmf_fit, TmfConfig, TmfModel};
pub use train::{
    batch_gradient, elect_best, fit, parallel_fit, should_stop, BatchContext, Checkpoint,
    SelectionMetric, TrainConfig, Trainable,
};
