//! Artificial missingness for held-out imputation evaluation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PotsError, Result};
use crate::sample::{PotsDataset, TimeSeriesSample};

/// A dataset with extra cells hidden, kept alongside the original.
#[derive(Debug, Clone)]
pub struct CorruptedView {
    pub corrupted: PotsDataset,
    pub original: PotsDataset,
    /// Per sample, row-major: observed originally and removed artificially.
    pub indicating: Vec<Vec<bool>>,
}

impl CorruptedView {
    /// Rebuilds a view from a corrupted/original pair, e.g. two containers
    /// written by the `corrupt` pipeline stage.
    pub fn from_pair(corrupted: PotsDataset, original: PotsDataset) -> Result<Self> {
        if corrupted.len() != original.len()
            || corrupted.n_steps() != original.n_steps()
            || corrupted.n_features() != original.n_features()
        {
            return Err(PotsError::invalid(
                "corrupted and original datasets differ in size or shape",
            ));
        }
        let mut indicating = Vec::with_capacity(corrupted.len());
        for (c, o) in corrupted.samples().iter().zip(original.samples()) {
            if c.sample_id() != o.sample_id() {
                return Err(PotsError::invalid(format!(
                    "sample id mismatch: corrupted {} vs original {}",
                    c.sample_id(),
                    o.sample_id()
                )));
            }
            let mut ind = Vec::with_capacity(c.mask().len());
            for (i, (&cm, &om)) in c.mask().iter().zip(o.mask()).enumerate() {
                if cm && !om {
                    return Err(PotsError::invalid(format!(
                        "sample {}: cell {i} observed in corrupted but not in original",
                        c.sample_id()
                    )));
                }
                if cm && c.values()[i].to_bits() != o.values()[i].to_bits() {
                    return Err(PotsError::invalid(format!(
                        "sample {}: cell {i} differs between corrupted and original",
                        c.sample_id()
                    )));
                }
                ind.push(om && !cm);
            }
            indicating.push(ind);
        }
        Ok(CorruptedView {
            corrupted,
            original,
            indicating,
        })
    }

    pub fn n_indicated(&self) -> usize {
        self.indicating.iter().flatten().filter(|&&b| b).count()
    }
}

/// Picks `round(rate · n_observed)` observed cells uniformly without
/// replacement. Returned cell indices are sorted.
pub fn mcar_cells(mask: &[bool], rate: f64, rng: &mut impl Rng) -> Vec<usize> {
    let observed: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect();
    let k = (rate * observed.len() as f64).round() as usize;
    let k = k.min(observed.len());
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, observed.len(), k)
        .into_iter()
        .map(|j| observed[j])
        .collect();
    picked.sort_unstable();
    picked
}

pub(crate) fn check_rate(rate: f64, upper_inclusive: bool) -> Result<()> {
    let ok = rate >= 0.0
        && if upper_inclusive {
            rate <= 1.0
        } else {
            rate < 1.0
        };
    if ok {
        Ok(())
    } else {
        let hi = if upper_inclusive { "1]" } else { "1)" };
        Err(PotsError::invalid(format!(
            "missing rate {rate} outside [0, {hi}"
        )))
    }
}

/// Hides an exact fraction of each sample's observed cells (MCAR).
pub fn inject_mcar(dataset: &PotsDataset, rate: f64, seed: u64) -> Result<CorruptedView> {
    check_rate(rate, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples: Vec<TimeSeriesSample> = Vec::with_capacity(dataset.len());
    let mut indicating = Vec::with_capacity(dataset.len());
    for s in dataset.samples() {
        let cells = mcar_cells(s.mask(), rate, &mut rng);
        let mut ind = vec![false; s.mask().len()];
        for &c in &cells {
            ind[c] = true;
        }
        samples.push(s.without_cells(&cells));
        indicating.push(ind);
    }
    Ok(CorruptedView {
        corrupted: dataset.with_samples(samples)?,
        original: dataset.clone(),
        indicating,
    })
}
