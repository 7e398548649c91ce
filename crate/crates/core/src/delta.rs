use crate::error::{PotsError, Result};
use crate::sample::check_increasing;

/// Elapsed time since each feature was last observed, `T×D` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaMatrix {
    n_features: usize,
    data: Vec<f64>,
}

impl DeltaMatrix {
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, step: usize, feature: usize) -> f64 {
        self.data[step * self.n_features + feature]
    }

    pub fn column(&self, feature: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(feature)
            .step_by(self.n_features)
            .copied()
            .collect()
    }
}

/// `δ₀ = 0`; `δₜ = sₜ − sₜ₋₁` if the feature was observed at `t−1`, else
/// `sₜ − sₜ₋₁ + δₜ₋₁`.
pub fn compute_delta(timestamps: &[f64], mask: &[bool], n_features: usize) -> Result<DeltaMatrix> {
    check_increasing(timestamps).map_err(PotsError::InvalidInput)?;
    if n_features == 0 || mask.len() != timestamps.len() * n_features {
        return Err(PotsError::invalid(format!(
            "mask has {} cells, expected {}×{n_features}",
            mask.len(),
            timestamps.len()
        )));
    }
    let mut data = vec![0.0; mask.len()];
    for t in 1..timestamps.len() {
        let gap = timestamps[t] - timestamps[t - 1];
        for d in 0..n_features {
            let prev = (t - 1) * n_features + d;
            data[t * n_features + d] = if mask[prev] { gap } else { gap + data[prev] };
        }
    }
    Ok(DeltaMatrix { n_features, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(ts: &[f64], mask: &[bool]) -> Vec<f64> {
        compute_delta(ts, mask, 1).unwrap().column(0)
    }

    #[test]
    fn recurrence_examples() {
        let ts = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(
            col(&ts, &[true, false, false, true]),
            vec![0.0, 1.0, 2.0, 3.0]
        );
        assert_eq!(
            col(&ts, &[true, true, true, true]),
            vec![0.0, 1.0, 1.0, 1.0]
        );
        assert_eq!(
            col(&[0.0, 0.5, 2.0], &[true, true, false]),
            vec![0.0, 0.5, 1.5]
        );
    }

    #[test]
    fn features_are_independent() {
        let d =
            compute_delta(&[0.0, 1.0, 3.0], &[false, true, false, true, true, true], 2).unwrap();
        assert_eq!(d.column(0), vec![0.0, 1.0, 3.0]);
        assert_eq!(d.column(1), vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn rejects_non_increasing_timestamps() {
        assert!(matches!(
            compute_delta(&[0.0, 1.0, 1.0], &[true; 3], 1),
            Err(PotsError::InvalidInput(_))
        ));
    }
}
