use crate::error::{PotsError, Result};

/// Value stored in unobserved cells. The mask is authoritative; the
/// sentinel only keeps missing cells from being mistaken for real values.
pub const MISSING: f64 = f64::NAN;

/// One multivariate series window of `T` steps and `D` features.
///
/// Values and mask are stored row-major: cell `(t, d)` lives at `t·D + d`.
#[derive(Debug, Clone)]
pub struct TimeSeriesSample {
    sample_id: u64,
    timestamps: Vec<f64>,
    values: Vec<f64>,
    mask: Vec<bool>,
    n_features: usize,
    label: Option<usize>,
}

impl TimeSeriesSample {
    /// Builds a sample whose mask is derived from the values: NaN cells are
    /// missing, finite cells observed. Infinite values are rejected.
    pub fn new(
        sample_id: u64,
        timestamps: Vec<f64>,
        values: Vec<f64>,
        n_features: usize,
        label: Option<usize>,
    ) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| v.is_infinite()) {
            return Err(PotsError::invalid(format!(
                "sample {sample_id}: infinite value at cell {i}"
            )));
        }
        let mask = values.iter().map(|v| !v.is_nan()).collect();
        Self::from_parts(sample_id, timestamps, values, mask, n_features, label)
    }

    /// Builds a sample from an explicit mask; missing cells are rewritten to
    /// the sentinel and observed cells must be finite.
    pub fn from_parts(
        sample_id: u64,
        timestamps: Vec<f64>,
        mut values: Vec<f64>,
        mask: Vec<bool>,
        n_features: usize,
        label: Option<usize>,
    ) -> Result<Self> {
        let n_steps = timestamps.len();
        if n_steps == 0 || n_features == 0 {
            return Err(PotsError::invalid(format!(
                "sample {sample_id}: need at least one step and one feature"
            )));
        }
        if values.len() != n_steps * n_features || mask.len() != values.len() {
            return Err(PotsError::invalid(format!(
                "sample {sample_id}: expected {} cells, got {} values and {} mask entries",
                n_steps * n_features,
                values.len(),
                mask.len()
            )));
        }
        check_increasing(&timestamps)
            .map_err(|msg| PotsError::invalid(format!("sample {sample_id}: {msg}")))?;
        for (i, (v, &m)) in values.iter_mut().zip(&mask).enumerate() {
            if m {
                if !v.is_finite() {
                    return Err(PotsError::invalid(format!(
                        "sample {sample_id}: observed cell {i} holds non-finite {v}"
                    )));
                }
            } else {
                *v = MISSING;
            }
        }
        Ok(TimeSeriesSample {
            sample_id,
            timestamps,
            values,
            mask,
            n_features,
            label,
        })
    }

    pub fn sample_id(&self) -> u64 {
        self.sample_id
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn n_steps(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn value(&self, step: usize, feature: usize) -> Option<f64> {
        let i = step * self.n_features + feature;
        self.mask[i].then(|| self.values[i])
    }

    pub fn n_observed(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Values with missing cells replaced by zero.
    pub fn zero_filled(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.mask)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect()
    }

    /// Mask as 0/1 floats.
    pub fn mask_f64(&self) -> Vec<f64> {
        self.mask
            .iter()
            .map(|&m| if m { 1.0 } else { 0.0 })
            .collect()
    }

    /// Copy of this sample with the given cells marked missing.
    pub fn without_cells(&self, cells: &[usize]) -> Self {
        let mut out = self.clone();
        for &c in cells {
            out.mask[c] = false;
            out.values[c] = MISSING;
        }
        out
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    /// Bitwise equality, treating every missing cell as equal regardless of
    /// its NaN payload.
    pub fn same_as(&self, other: &Self) -> bool {
        self.sample_id == other.sample_id
            && self.n_features == other.n_features
            && self.label == other.label
            && self.mask == other.mask
            && bits_eq(&self.timestamps, &other.timestamps)
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.mask)
                .all(|((a, b), &m)| !m || a.to_bits() == b.to_bits())
    }
}

fn bits_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

pub(crate) fn check_increasing(timestamps: &[f64]) -> std::result::Result<(), String> {
    if let Some(t) = timestamps.iter().find(|t| !t.is_finite()) {
        return Err(format!("non-finite timestamp {t}"));
    }
    for (i, w) in timestamps.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(format!(
                "timestamps must be strictly increasing (step {} = {} after {})",
                i + 1,
                w[1],
                w[0]
            ));
        }
    }
    Ok(())
}

/// Homogeneous in-memory collection of samples.
#[derive(Debug, Clone)]
pub struct PotsDataset {
    samples: Vec<TimeSeriesSample>,
    n_steps: usize,
    n_features: usize,
    n_classes: Option<usize>,
}

impl PotsDataset {
    pub fn new(
        samples: Vec<TimeSeriesSample>,
        n_steps: usize,
        n_features: usize,
        n_classes: Option<usize>,
    ) -> Result<Self> {
        if n_steps == 0 || n_features == 0 {
            return Err(PotsError::invalid(
                "n_steps and n_features must be positive",
            ));
        }
        if n_classes == Some(0) {
            return Err(PotsError::invalid(
                "n_classes must be positive when present",
            ));
        }
        for s in &samples {
            if s.n_steps() != n_steps || s.n_features() != n_features {
                return Err(PotsError::invalid(format!(
                    "sample {} has shape ({}, {}), dataset expects ({n_steps}, {n_features})",
                    s.sample_id(),
                    s.n_steps(),
                    s.n_features()
                )));
            }
            if let (Some(c), Some(l)) = (n_classes, s.label()) {
                if l >= c {
                    return Err(PotsError::invalid(format!(
                        "sample {} has label {l} outside [0, {c})",
                        s.sample_id()
                    )));
                }
            }
        }
        Ok(PotsDataset {
            samples,
            n_steps,
            n_features,
            n_classes,
        })
    }

    /// Infers the shape from the first sample.
    pub fn from_samples(samples: Vec<TimeSeriesSample>, n_classes: Option<usize>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| PotsError::invalid("cannot infer shape of an empty dataset"))?;
        let (t, d) = (first.n_steps(), first.n_features());
        Self::new(samples, t, d, n_classes)
    }

    pub fn samples(&self) -> &[TimeSeriesSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<TimeSeriesSample> {
        self.samples
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<Option<usize>> {
        self.samples.iter().map(|s| s.label()).collect()
    }

    /// New dataset with the same shape and class count.
    pub fn with_samples(&self, samples: Vec<TimeSeriesSample>) -> Result<Self> {
        Self::new(samples, self.n_steps, self.n_features, self.n_classes)
    }

    /// Sample-by-sample [`TimeSeriesSample::same_as`].
    pub fn same_as(&self, other: &Self) -> bool {
        self.n_steps == other.n_steps
            && self.n_features == other.n_features
            && self.samples.len() == other.samples.len()
            && self
                .samples
                .iter()
                .zip(&other.samples)
                .all(|(a, b)| a.same_as(b))
    }
}

/// Shared access contract of the in-memory and the lazy on-disk backends.
pub trait DatasetAccess: Send + Sync {
    fn len(&self) -> usize;
    fn n_steps(&self) -> usize;
    fn n_features(&self) -> usize;
    fn n_classes(&self) -> Option<usize>;
    /// Samples at `indices`, in that order. Duplicates are allowed.
    fn fetch(&self, indices: &[usize]) -> Result<Vec<TimeSeriesSample>>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl DatasetAccess for PotsDataset {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn n_steps(&self) -> usize {
        self.n_steps
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn n_classes(&self) -> Option<usize> {
        self.n_classes
    }

    fn fetch(&self, indices: &[usize]) -> Result<Vec<TimeSeriesSample>> {
        indices
            .iter()
            .map(|&i| {
                self.samples.get(i).cloned().ok_or_else(|| {
                    PotsError::invalid(format!(
                        "sample index {i} out of range for {} samples",
                        self.samples.len()
                    ))
                })
            })
            .collect()
    }
}

/// Loads every sample of `data` into memory.
pub fn materialize(data: &dyn DatasetAccess) -> Result<PotsDataset> {
    let indices: Vec<usize> = (0..data.len()).collect();
    let samples = data.fetch(&indices)?;
    PotsDataset::new(samples, data.n_steps(), data.n_features(), data.n_classes())
}
