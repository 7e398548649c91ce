use pots_core::{DatasetAccess, NormStats};
use pots_tensor::Tensor;

use crate::api::{check_compatible, for_each_chunk, restore_observed, ModelKind, PotsModel};
use crate::artifact::ModelArtifact;
use crate::error::{ModelError, Result};

/// Carries the last observation forward; leading gaps are filled backward
/// from the first observation and empty features take `fallback[d]`.
pub fn locf_impute(values: &[f64], mask: &[bool], fallback: &[f64]) -> Vec<f64> {
    let d = fallback.len();
    let t = values.len() / d;
    let mut out = values.to_vec();
    for f in 0..d {
        let first = (0..t).find(|&s| mask[s * d + f]);
        let mut carry = match first {
            Some(s) => values[s * d + f],
            None => fallback[f],
        };
        for s in 0..t {
            let i = s * d + f;
            if mask[i] {
                carry = values[i];
            } else {
                out[i] = carry;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocfImputer {
    fallback: Vec<f64>,
}

impl LocfImputer {
    pub fn new(fallback: Vec<f64>) -> Result<Self> {
        if fallback.is_empty() || !fallback.iter().all(|v| v.is_finite()) {
            return Err(ModelError::invalid(
                "LOCF fallback must be a non-empty finite vector",
            ));
        }
        Ok(LocfImputer { fallback })
    }

    /// Fallback values are the per-feature observed training means.
    pub fn fit(train: &dyn DatasetAccess) -> Result<Self> {
        Self::new(NormStats::fit(train)?.mean)
    }

    pub fn fallback(&self) -> &[f64] {
        &self.fallback
    }

    pub fn from_artifact(a: &ModelArtifact) -> Result<Self> {
        let d = a.usize("n_features")?;
        Self::new(a.tensor_shaped("fallback", &[d])?.into_data())
    }
}

impl PotsModel for LocfImputer {
    fn kind(&self) -> ModelKind {
        ModelKind::Locf
    }

    fn n_features(&self) -> usize {
        self.fallback.len()
    }

    fn impute(&self, data: &dyn DatasetAccess) -> Result<Vec<Vec<f64>>> {
        check_compatible(self, data)?;
        let mut out = Vec::with_capacity(data.len());
        for_each_chunk(data, |samples| {
            for s in &samples {
                let mut filled = locf_impute(s.values(), s.mask(), &self.fallback);
                restore_observed(s, &mut filled);
                out.push(filled);
            }
            Ok(())
        })?;
        Ok(out)
    }

    fn to_artifact(&self) -> ModelArtifact {
        let mut a = ModelArtifact::new(ModelKind::Locf);
        a.set_usize("n_features", self.fallback.len());
        a.push_tensor("fallback", Tensor::vector(self.fallback.clone()));
        a
    }
}
