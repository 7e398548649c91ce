use pots_core::{DatasetAccess, NormStats};
use pots_tensor::Tensor;

use crate::api::{check_compatible, for_each_chunk, ModelKind, PotsModel};
use crate::artifact::ModelArtifact;
use crate::error::{ModelError, Result};

/// Fills every missing cell with the observed training mean of its feature.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanImputer {
    means: Vec<f64>,
}

impl MeanImputer {
    pub fn new(means: Vec<f64>) -> Result<Self> {
        if means.is_empty() || !means.iter().all(|v| v.is_finite()) {
            return Err(ModelError::invalid(
                "feature means must be a non-empty finite vector",
            ));
        }
        Ok(MeanImputer { means })
    }

    pub fn fit(train: &dyn DatasetAccess) -> Result<Self> {
        Self::new(NormStats::fit(train)?.mean)
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn from_artifact(a: &ModelArtifact) -> Result<Self> {
        let d = a.usize("n_features")?;
        Self::new(a.tensor_shaped("means", &[d])?.into_data())
    }
}

impl PotsModel for MeanImputer {
    fn kind(&self) -> ModelKind {
        ModelKind::Mean
    }

    fn n_features(&self) -> usize {
        self.means.len()
    }

    fn impute(&self, data: &dyn DatasetAccess) -> Result<Vec<Vec<f64>>> {
        check_compatible(self, data)?;
        let d = self.means.len();
        let mut out = Vec::with_capacity(data.len());
        for_each_chunk(data, |samples| {
            for s in &samples {
                let filled = s
                    .values()
                    .iter()
                    .zip(s.mask())
                    .enumerate()
                    .map(|(i, (&v, &m))| if m { v } else { self.means[i % d] })
                    .collect();
                out.push(filled);
            }
            Ok(())
        })?;
        Ok(out)
    }

    fn to_artifact(&self) -> ModelArtifact {
        let mut a = ModelArtifact::new(ModelKind::Mean);
        a.set_usize("n_features", self.means.len());
        a.push_tensor("means", Tensor::vector(self.means.clone()));
        a
    }
}
