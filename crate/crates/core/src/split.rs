use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PotsError, Result};
use crate::sample::PotsDataset;

/// Seeded shuffle followed by a contiguous train/val/test cut. Validation
/// and test sizes are rounded down; the remainder goes to training.
pub fn split(
    dataset: &PotsDataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(PotsDataset, PotsDataset, PotsDataset)> {
    let (train, val, test) = fractions;
    if !(train > 0.0 && val > 0.0 && test > 0.0) || ((train + val + test) - 1.0).abs() > 1e-9 {
        return Err(PotsError::invalid(format!(
            "split fractions must be positive and sum to 1, got ({train}, {val}, {test})"
        )));
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // the epsilon absorbs products like 0.29·100 = 28.999999999999996
    let n_val = (val * n as f64 + 1e-9).floor() as usize;
    let n_test = (test * n as f64 + 1e-9).floor() as usize;
    let n_train = n - n_val - n_test;
    let pick = |range: &[usize]| {
        dataset.with_samples(
            range
                .iter()
                .map(|&i| dataset.samples()[i].clone())
                .collect(),
        )
    };
    Ok((
        pick(&order[..n_train])?,
        pick(&order[n_train..n_train + n_val])?,
        pick(&order[n_train + n_val..])?,
    ))
}
