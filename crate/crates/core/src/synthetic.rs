//! Seeded sinusoid benchmark data.
//!
//! Class `c` draws from `sin(2π·fᶜ·t/T + φᶜ + θ_d + ε) + ½·sin(4π·fᶜ·t/T + θ_d)`
//! scaled by a per-sample amplitude, where `fᶜ = 1 + c/2` cycles per window,
//! `φᶜ = c·π/3`, `θ_d = 0.7·d` and `ε` is a small per-sample phase jitter.
//! Gaussian noise (σ = 0.1) is added per cell and then an exact fraction of
//! cells is removed completely at random.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{PotsError, Result};
use crate::missing::{check_rate, mcar_cells};
use crate::sample::{PotsDataset, TimeSeriesSample};

const NOISE_STD: f64 = 0.1;
const PHASE_JITTER_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_steps: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub missing_rate: f64,
    pub seed: u64,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<PotsDataset> {
    let SyntheticSpec {
        n_samples,
        n_steps,
        n_features,
        n_classes,
        missing_rate,
        seed,
    } = *spec;
    if n_samples == 0 || n_steps == 0 || n_features == 0 || n_classes == 0 {
        return Err(PotsError::invalid(format!(
            "synthetic counts must be >= 1, got samples={n_samples} steps={n_steps} \
             features={n_features} classes={n_classes}"
        )));
    }
    check_rate(missing_rate, false)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n_samples).map(|i| i % n_classes).collect();
    labels.shuffle(&mut rng);
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    let jitter = Normal::new(0.0, PHASE_JITTER_STD).expect("valid std");
    let window = n_steps as f64;

    let mut samples = Vec::with_capacity(n_samples);
    for (i, &class) in labels.iter().enumerate() {
        let freq = 1.0 + 0.5 * class as f64;
        let phase = class as f64 * PI / 3.0;
        let amp: f64 = rng.random_range(0.8..1.2);
        let eps = jitter.sample(&mut rng);
        let mut values = Vec::with_capacity(n_steps * n_features);
        for t in 0..n_steps {
            let x = 2.0 * PI * freq * t as f64 / window;
            for d in 0..n_features {
                let theta = 0.7 * d as f64;
                let clean = (x + phase + theta + eps).sin() + 0.5 * (2.0 * x + theta).sin();
                values.push(amp * clean + noise.sample(&mut rng));
            }
        }
        let timestamps = (0..n_steps).map(|t| t as f64).collect();
        let full = TimeSeriesSample::new(i as u64, timestamps, values, n_features, Some(class))?;
        let hidden = mcar_cells(full.mask(), missing_rate, &mut rng);
        samples.push(full.without_cells(&hidden));
    }
    PotsDataset::new(samples, n_steps, n_features, Some(n_classes))
}
