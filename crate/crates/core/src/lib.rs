//! Data model for partially-observed multivariate time series.
//!
//! A [`TimeSeriesSample`] holds a `T×D` value grid together with an
//! observation mask; unobserved cells carry the [`MISSING`] sentinel. A
//! [`PotsDataset`] is a homogeneous collection of samples kept in memory,
//! and [`store`] provides the on-disk `.pots` container with a read-only,
//! batch-fetching handle. Both backends implement [`DatasetAccess`], which
//! is what models train against.

pub mod csv_io;
pub mod delta;
mod error;
pub mod metrics;
pub mod missing;
pub mod norm;
mod sample;
pub mod split;
pub mod store;
pub mod synthetic;

pub use csv_io::{export_csv, ingest_csv, CsvSchema};
pub use delta::{compute_delta, DeltaMatrix};
pub use error::{PotsError, Result};
pub use missing::{inject_mcar, CorruptedView};
pub use norm::NormStats;
pub use sample::{materialize, DatasetAccess, PotsDataset, TimeSeriesSample, MISSING};
pub use split::split;
pub use store::{lazy_dataset, open_readonly, write_container, LazyDataset, ReadHandle};
pub use synthetic::{generate_synthetic, SyntheticSpec};
