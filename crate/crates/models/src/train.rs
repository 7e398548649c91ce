//! Minibatch training with best-checkpoint election and sharded gradients.

use pots_core::{DatasetAccess, TimeSeriesSample};
use pots_tensor::{adam_step, AdamConfig, AdamState, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::api::{check_compatible, PotsModel};
use crate::error::{ModelError, Result};

/// Offset added to the training seed for the validation hold-out draw.
pub const VALIDATION_SEED_OFFSET: u64 = 0x5eed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMetric {
    /// Lower is better.
    ValLoss,
    /// Higher is better.
    ValAccuracy,
}

impl SelectionMetric {
    pub fn name(self) -> &'static str {
        match self {
            SelectionMetric::ValLoss => "val_loss",
            SelectionMetric::ValAccuracy => "val_accuracy",
        }
    }

    /// Strict improvement, so ties keep the earlier value.
    pub fn improves(self, candidate: f64, best: f64) -> bool {
        match self {
            SelectionMetric::ValLoss => candidate < best,
            SelectionMetric::ValAccuracy => candidate > best,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs without improvement before stopping; 0 disables.
    pub patience: usize,
    pub seed: u64,
    pub workers: usize,
    pub selection_metric: SelectionMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            patience: 0,
            seed: 0,
            workers: 1,
            selection_metric: SelectionMetric::ValLoss,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.workers == 0 {
            return Err(ModelError::invalid(
                "epochs, batch_size and workers must be positive",
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// The elected parameter snapshot. `epoch` is 1-indexed.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub metric: f64,
    pub parameters: Vec<Tensor>,
    /// Validation metric of every completed epoch.
    pub metric_log: Vec<f64>,
    /// Mean minibatch training loss of every completed epoch.
    pub train_loss_log: Vec<f64>,
}

/// Where a minibatch sits in the run; models derive per-batch randomness
/// from it so that batches are reproducible regardless of sharding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchContext {
    pub epoch: usize,
    pub batch_index: usize,
    pub seed: u64,
}

impl BatchContext {
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((self.epoch as u64) << 32) | self.batch_index as u64);
        rng
    }
}

/// A model trained by gradient descent on a tape-built loss.
///
/// The loss of a batch must be a sum of per-shard terms, each already
/// divided by the batch-wide normalizers from
/// [`loss_denominators`](Trainable::loss_denominators). Summing shard
/// gradients then yields the full-batch gradient.
pub trait Trainable: PotsModel {
    type Prepared: Send + Sync;

    fn parameters(&self) -> Vec<Tensor>;

    fn set_parameters(&mut self, params: Vec<Tensor>) -> Result<()>;

    /// Fits data-dependent state (normalization, feature means) before the
    /// first epoch.
    fn prepare_training(&mut self, train: &dyn DatasetAccess) -> Result<()>;

    fn prepare_batch(
        &self,
        samples: Vec<TimeSeriesSample>,
        ctx: BatchContext,
    ) -> Result<Vec<Self::Prepared>>;

    fn loss_denominators(&self, batch: &[Self::Prepared]) -> Vec<f64>;

    fn shard_loss(
        &self,
        tape: &mut Tape,
        params: &[Var],
        shard: &[Self::Prepared],
        denominators: &[f64],
    ) -> Result<Var>;

    fn validation_metric(
        &self,
        val: &dyn DatasetAccess,
        metric: SelectionMetric,
        seed: u64,
    ) -> Result<f64>;
}

/// Index of the best entry of `log`; ties go to the earliest.
pub fn elect_best(log: &[f64], metric: SelectionMetric) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in log.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) if metric.improves(v, log[b]) => best = Some(i),
            _ => {}
        }
    }
    best
}

/// Whether training stops after the last epoch in `log`.
pub fn should_stop(log: &[f64], metric: SelectionMetric, patience: usize) -> bool {
    match elect_best(log, metric) {
        Some(best) if patience > 0 => log.len() - 1 - best >= patience,
        _ => false,
    }
}

/// Splits `len` items into at most `n` contiguous near-equal ranges,
/// larger ranges first. Empty ranges are dropped.
pub fn shard_ranges(len: usize, n: usize) -> Vec<std::ops::Range<usize>> {
    let n = n.max(1);
    let (base, extra) = (len / n, len % n);
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let size = base + usize::from(i < extra);
        if size > 0 {
            out.push(start..start + size);
        }
        start += size;
    }
    out
}

fn shard_gradient<M: Trainable + ?Sized>(
    model: &M,
    params: &[Tensor],
    shard: &[M::Prepared],
    denominators: &[f64],
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = model.shard_loss(&mut tape, &vars, shard, denominators)?;
    let value = tape.value(loss).item().unwrap_or(f64::NAN);
    let grads = tape.backward(loss)?;
    let per_param = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get_or_zeros(v, p))
        .collect();
    Ok((value, per_param))
}

/// Loss and gradient of one prepared batch, computed on `workers` shards
/// and summed in shard order.
pub fn batch_gradient<M: Trainable + ?Sized>(
    model: &M,
    params: &[Tensor],
    batch: &[M::Prepared],
    workers: usize,
) -> Result<(f64, Vec<Tensor>)> {
    let denominators = model.loss_denominators(batch);
    let ranges = shard_ranges(batch.len(), workers);
    let parts: Vec<Result<(f64, Vec<Tensor>)>> = if ranges.len() <= 1 {
        ranges
            .iter()
            .map(|r| shard_gradient(model, params, &batch[r.clone()], &denominators))
            .collect()
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = ranges
                .iter()
                .map(|r| {
                    let shard = &batch[r.clone()];
                    let denominators = &denominators;
                    scope.spawn(move || shard_gradient(model, params, shard, denominators))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("shard worker panicked"))
                .collect()
        })
    };
    let mut loss = 0.0;
    let mut total: Option<Vec<Tensor>> = None;
    for part in parts {
        let (l, grads) = part?;
        loss += l;
        match &mut total {
            None => total = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
            }
        }
    }
    let grads = total.unwrap_or_else(|| params.iter().map(|p| Tensor::zeros(p.shape())).collect());
    Ok((loss, grads))
}

/// Single-worker training; identical to [`parallel_fit`] with one worker.
pub fn fit<M: Trainable>(
    model: &mut M,
    train: &dyn DatasetAccess,
    val: &dyn DatasetAccess,
    config: &TrainConfig,
) -> Result<Checkpoint> {
    let single = TrainConfig {
        workers: 1,
        ..config.clone()
    };
    parallel_fit(model, train, val, &single)
}

/// Trains `model` in place and leaves it holding the elected parameters.
pub fn parallel_fit<M: Trainable>(
    model: &mut M,
    train: &dyn DatasetAccess,
    val: &dyn DatasetAccess,
    config: &TrainConfig,
) -> Result<Checkpoint> {
    config.validate()?;
    check_compatible(model, train)?;
    check_compatible(model, val)?;
    if train.is_empty() {
        return Err(ModelError::invalid("training set is empty"));
    }
    if val.is_empty() {
        return Err(ModelError::invalid("validation set is empty"));
    }
    model.prepare_training(train)?;
    let mut params = model.parameters();
    let mut adam = AdamState::new(
        &params,
        AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let val_seed = config.seed.wrapping_add(VALIDATION_SEED_OFFSET);
    let mut log = Vec::with_capacity(config.epochs);
    let mut train_log = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, Vec<Tensor>)> = None;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(
            config.seed.wrapping_add(epoch as u64),
        ));
        let mut last_batch = 0;
        let mut loss_sum = 0.0;
        for (batch_index, chunk) in order.chunks(config.batch_size).enumerate() {
            last_batch = batch_index;
            let samples = train.fetch(chunk)?;
            let ctx = BatchContext {
                epoch,
                batch_index,
                seed: config.seed,
            };
            let prepared = model.prepare_batch(samples, ctx)?;
            let (loss, grads) = batch_gradient(model, &params, &prepared, config.workers)?;
            if !loss.is_finite() || !grads.iter().all(Tensor::all_finite) {
                return Err(ModelError::Diverged {
                    epoch: epoch + 1,
                    batch: batch_index + 1,
                });
            }
            adam_step(&mut params, &grads, &mut adam)?;
            loss_sum += loss;
        }
        train_log.push(loss_sum / (last_batch + 1) as f64);
        model.set_parameters(params.clone())?;
        let metric = model.validation_metric(val, config.selection_metric, val_seed)?;
        if !metric.is_finite() {
            return Err(ModelError::Diverged {
                epoch: epoch + 1,
                batch: last_batch + 1,
            });
        }
        log.push(metric);
        if elect_best(&log, config.selection_metric) == Some(epoch) {
            best = Some((epoch, params.clone()));
        }
        if should_stop(&log, config.selection_metric, config.patience) {
            break;
        }
    }

    let (epoch, parameters) = best.expect("at least one epoch ran");
    model.set_parameters(parameters.clone())?;
    Ok(Checkpoint {
        epoch: epoch + 1,
        metric: log[epoch],
        parameters,
        metric_log: log,
        train_loss_log: train_log,
    })
}
