use crate::error::Result;
use crate::sample::{DatasetAccess, PotsDataset, TimeSeriesSample, MISSING};

const STD_FLOOR: f64 = 1e-8;
const FIT_CHUNK: usize = 256;

/// Per-feature mean and standard deviation over observed cells.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(n_features: usize) -> Self {
        NormStats {
            mean: vec![0.0; n_features],
            std: vec![1.0; n_features],
        }
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    /// Population statistics over observed cells, streamed in index order so
    /// every backend produces the same bits. Features with no observation
    /// get mean 0 and std 1.
    pub fn fit(data: &dyn DatasetAccess) -> Result<Self> {
        let d = data.n_features();
        let mut sum = vec![0.0; d];
        let mut count = vec![0usize; d];
        for_each_chunk(data, |s| {
            for (i, (&v, &m)) in s.values().iter().zip(s.mask()).enumerate() {
                if m {
                    sum[i % d] += v;
                    count[i % d] += 1;
                }
            }
        })?;
        let mean: Vec<f64> = sum
            .iter()
            .zip(&count)
            .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect();
        let mut sq = vec![0.0; d];
        for_each_chunk(data, |s| {
            for (i, (&v, &m)) in s.values().iter().zip(s.mask()).enumerate() {
                if m {
                    let dev = v - mean[i % d];
                    sq[i % d] += dev * dev;
                }
            }
        })?;
        let std = sq
            .iter()
            .zip(&count)
            .map(|(&q, &c)| {
                if c > 0 {
                    (q / c as f64).sqrt().max(STD_FLOOR)
                } else {
                    1.0
                }
            })
            .collect();
        Ok(NormStats { mean, std })
    }

    /// Normalizes observed cells of a row-major `T×D` grid; missing cells
    /// stay missing.
    pub fn normalize(&self, values: &[f64], mask: &[bool]) -> Vec<f64> {
        let d = self.n_features();
        values
            .iter()
            .zip(mask)
            .enumerate()
            .map(|(i, (&v, &m))| {
                if m {
                    (v - self.mean[i % d]) / self.std[i % d]
                } else {
                    MISSING
                }
            })
            .collect()
    }

    /// Maps normalized values back to the original scale.
    pub fn invert(&self, values: &[f64]) -> Vec<f64> {
        let d = self.n_features();
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| v * self.std[i % d] + self.mean[i % d])
            .collect()
    }

    pub fn apply_sample(&self, s: &TimeSeriesSample) -> TimeSeriesSample {
        let values = self.normalize(s.values(), s.mask());
        TimeSeriesSample::from_parts(
            s.sample_id(),
            s.timestamps().to_vec(),
            values,
            s.mask().to_vec(),
            s.n_features(),
            s.label(),
        )
        .expect("normalizing preserves sample invariants")
    }

    pub fn apply(&self, dataset: &PotsDataset) -> Result<PotsDataset> {
        dataset.with_samples(
            dataset
                .samples()
                .iter()
                .map(|s| self.apply_sample(s))
                .collect(),
        )
    }
}

fn for_each_chunk(data: &dyn DatasetAccess, mut f: impl FnMut(&TimeSeriesSample)) -> Result<()> {
    let n = data.len();
    let mut start = 0;
    while start < n {
        let end = (start + FIT_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        for s in data.fetch(&idx)? {
            f(&s);
        }
        start = end;
    }
    Ok(())
}
