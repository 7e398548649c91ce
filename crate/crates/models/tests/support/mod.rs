#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};

use pots_core::{generate_synthetic, DatasetAccess, PotsDataset, SyntheticSpec, TimeSeriesSample};
use pots_models::{
    BatchContext, ModelArtifact, ModelKind, PotsModel, Result, SelectionMetric, Trainable,
};
use pots_tensor::{Tape, Tensor, Var};

pub fn synthetic(
    n: usize,
    t: usize,
    d: usize,
    classes: usize,
    rate: f64,
    seed: u64,
) -> PotsDataset {
    generate_synthetic(&SyntheticSpec {
        n_samples: n,
        n_steps: t,
        n_features: d,
        n_classes: classes,
        missing_rate: rate,
        seed,
    })
    .unwrap()
}

pub fn bits(rows: &[Vec<f64>]) -> Vec<u64> {
    rows.iter().flatten().map(|v| v.to_bits()).collect()
}

pub fn tensor_bits(ts: &[Tensor]) -> Vec<u64> {
    ts.iter()
        .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
        .collect()
}

/// A one-parameter model whose validation metrics follow a script, and
/// whose loss can be made non-finite at a chosen (epoch, batch).
pub struct Scripted {
    pub param: Tensor,
    pub script: Vec<f64>,
    pub calls: AtomicUsize,
    pub nan_at: Option<(usize, usize)>,
}

impl Scripted {
    pub fn new(script: Vec<f64>) -> Self {
        Scripted {
            param: Tensor::vector(vec![1.0]),
            script,
            calls: AtomicUsize::new(0),
            nan_at: None,
        }
    }
}

impl PotsModel for Scripted {
    fn kind(&self) -> ModelKind {
        ModelKind::Mean
    }

    fn n_features(&self) -> usize {
        1
    }

    fn to_artifact(&self) -> ModelArtifact {
        ModelArtifact::new(ModelKind::Mean)
    }
}

impl Trainable for Scripted {
    type Prepared = (f64, BatchContext);

    fn parameters(&self) -> Vec<Tensor> {
        vec![self.param.clone()]
    }

    fn set_parameters(&mut self, params: Vec<Tensor>) -> Result<()> {
        self.param = params.into_iter().next().unwrap();
        Ok(())
    }

    fn prepare_training(&mut self, _train: &dyn DatasetAccess) -> Result<()> {
        Ok(())
    }

    fn prepare_batch(
        &self,
        samples: Vec<TimeSeriesSample>,
        ctx: BatchContext,
    ) -> Result<Vec<Self::Prepared>> {
        Ok(samples.iter().map(|s| (s.values()[0], ctx)).collect())
    }

    fn loss_denominators(&self, batch: &[Self::Prepared]) -> Vec<f64> {
        vec![batch.len() as f64]
    }

    fn shard_loss(
        &self,
        tape: &mut Tape,
        params: &[Var],
        shard: &[Self::Prepared],
        denoms: &[f64],
    ) -> Result<Var> {
        // Σ (p − y)² = k·p² − 2p·Σy + Σy²
        let k = shard.len() as f64;
        let sum_y: f64 = shard.iter().map(|s| s.0).sum();
        let sum_y2: f64 = shard.iter().map(|s| s.0 * s.0).sum();
        let sq = tape.mul(params[0], params[0])?;
        let quad = tape.scale(sq, k);
        let lin = tape.scale(params[0], -2.0 * sum_y);
        let sum = tape.add(quad, lin)?;
        let sum = tape.add_scalar(sum, sum_y2);
        let ctx = shard[0].1;
        let factor = if self.nan_at == Some((ctx.epoch, ctx.batch_index)) {
            f64::NAN
        } else {
            1.0 / denoms[0]
        };
        Ok(tape.scale(sum, factor))
    }

    fn validation_metric(
        &self,
        _val: &dyn DatasetAccess,
        _m: SelectionMetric,
        _seed: u64,
    ) -> Result<f64> {
        let i = self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.script[i.min(self.script.len() - 1)])
    }
}
