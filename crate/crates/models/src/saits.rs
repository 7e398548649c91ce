//! Two-block self-attention imputer with a diagonally masked attention map.

use pots_core::metrics::masked_mse;
use pots_core::missing::mcar_cells;
use pots_core::{inject_mcar, materialize, DatasetAccess, NormStats, TimeSeriesSample};
use pots_tensor::{Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::api::{check_compatible, for_each_chunk, restore_observed, ModelKind, PotsModel};
use crate::artifact::ModelArtifact;
use crate::error::{ModelError, Result};
use crate::init::{check_shapes, stack, xavier};
use crate::train::{BatchContext, SelectionMetric, Trainable};

pub const N_BLOCKS: usize = 2;
const PER_BLOCK: usize = 12;
const MASK_FILL: f64 = -1e9;
const NAMES: [&str; PER_BLOCK] = [
    "in_w",
    "in_b",
    "step_bias",
    "wq",
    "wk",
    "wv",
    "ff1_w",
    "ff1_b",
    "ff2_w",
    "ff2_b",
    "out_w",
    "out_b",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SaitsConfig {
    pub d_model: usize,
    pub d_ff: usize,
    /// Weight of the held-out (masked imputation) loss term.
    pub lambda_mit: f64,
    /// Fraction of observed cells hidden per training sample.
    pub mit_rate: f64,
    pub seed: u64,
}

impl Default for SaitsConfig {
    fn default() -> Self {
        SaitsConfig {
            d_model: 32,
            d_ff: 64,
            lambda_mit: 1.0,
            mit_rate: 0.2,
            seed: 0,
        }
    }
}

/// One training sample in normalized, zero-filled form.
#[derive(Debug, Clone)]
pub struct SaitsItem {
    pub input: Vec<f64>,
    /// Observation mask after the artificial hold-out.
    pub mask: Vec<f64>,
    pub target: Vec<f64>,
    pub indicating: Vec<f64>,
}

/// Reconstruction and per-block attention weights (`[B, T, T]`).
pub struct SaitsOutput {
    pub reconstruction: Var,
    pub attention: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaitsLite {
    config: SaitsConfig,
    n_steps: usize,
    n_features: usize,
    norm: NormStats,
    params: Vec<Tensor>,
}

impl SaitsLite {
    pub fn new(config: SaitsConfig, n_steps: usize, n_features: usize) -> Result<Self> {
        if n_steps < 2 {
            return Err(ModelError::invalid(
                "self-attention imputation needs at least 2 steps",
            ));
        }
        if n_features == 0 || config.d_model == 0 || config.d_ff == 0 {
            return Err(ModelError::invalid(
                "feature count and layer widths must be positive",
            ));
        }
        if config.lambda_mit.is_nan()
            || config.lambda_mit < 0.0
            || !(0.0..1.0).contains(&config.mit_rate)
        {
            return Err(ModelError::invalid(
                "lambda_mit must be ≥ 0 and mit_rate in [0, 1)",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, dm, dff) = (n_features, config.d_model, config.d_ff);
        let mut params = Vec::with_capacity(N_BLOCKS * PER_BLOCK);
        for _ in 0..N_BLOCKS {
            params.push(xavier(&mut rng, 2 * d, dm));
            params.push(Tensor::zeros(&[dm]));
            params.push(Tensor::zeros(&[n_steps, dm]));
            for _ in 0..3 {
                params.push(xavier(&mut rng, dm, dm));
            }
            params.push(xavier(&mut rng, dm, dff));
            params.push(Tensor::zeros(&[dff]));
            params.push(xavier(&mut rng, dff, dm));
            params.push(Tensor::zeros(&[dm]));
            params.push(xavier(&mut rng, dm, d));
            params.push(Tensor::zeros(&[d]));
        }
        Ok(SaitsLite {
            config,
            n_steps,
            n_features,
            norm: NormStats::identity(n_features),
            params,
        })
    }

    pub fn config(&self) -> &SaitsConfig {
        &self.config
    }

    pub fn norm_stats(&self) -> &NormStats {
        &self.norm
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        let (t, d, dm, dff) = (
            self.n_steps,
            self.n_features,
            self.config.d_model,
            self.config.d_ff,
        );
        let block = [
            vec![2 * d, dm],
            vec![dm],
            vec![t, dm],
            vec![dm, dm],
            vec![dm, dm],
            vec![dm, dm],
            vec![dm, dff],
            vec![dff],
            vec![dff, dm],
            vec![dm],
            vec![dm, d],
            vec![d],
        ];
        (0..N_BLOCKS).flat_map(|_| block.iter().cloned()).collect()
    }

    /// Runs both blocks on zero-filled `[B, T, D]` inputs. Observed cells of
    /// block 1's output are replaced by the inputs before block 2.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: &Tensor,
        mask: &Tensor,
    ) -> Result<SaitsOutput> {
        let t = self.n_steps;
        let scale = 1.0 / (self.config.d_model as f64).sqrt();
        let diag = Tensor::identity(t);
        let m = tape.constant(mask.clone());
        let x_var = tape.constant(x.clone());
        let observed = tape.mul(m, x_var)?;
        let unobserved = tape.one_minus(m);
        let mut input = x_var;
        let mut attention = Vec::with_capacity(N_BLOCKS);
        let mut out = input;
        for b in 0..N_BLOCKS {
            let p = &params[b * PER_BLOCK..(b + 1) * PER_BLOCK];
            let joined = tape.concat(&[input, m])?;
            let mut h = tape.matmul(joined, p[0])?;
            h = tape.add(h, p[1])?;
            h = tape.add(h, p[2])?;
            let q = tape.matmul(h, p[3])?;
            let k = tape.matmul(h, p[4])?;
            let v = tape.matmul(h, p[5])?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scores = tape.scale(scores, scale);
            let scores = tape.masked_fill(scores, &diag, MASK_FILL)?;
            let weights = tape.softmax(scores);
            attention.push(weights);
            let context = tape.matmul(weights, v)?;
            let h2 = tape.add(h, context)?;
            let f = tape.matmul(h2, p[6])?;
            let f = tape.add(f, p[7])?;
            let f = tape.relu(f);
            let f = tape.matmul(f, p[8])?;
            let f = tape.add(f, p[9])?;
            let h3 = tape.add(h2, f)?;
            let o = tape.matmul(h3, p[10])?;
            out = tape.add(o, p[11])?;
            if b + 1 < N_BLOCKS {
                let filled = tape.mul(unobserved, out)?;
                input = tape.add(filled, observed)?;
            }
        }
        Ok(SaitsOutput {
            reconstruction: out,
            attention,
        })
    }

    fn inference(&self, samples: &[TimeSeriesSample]) -> Result<(Tensor, Vec<Tensor>)> {
        let (t, d) = (self.n_steps, self.n_features);
        let normalized: Vec<TimeSeriesSample> =
            samples.iter().map(|s| self.norm.apply_sample(s)).collect();
        let x = stack(t, d, normalized.iter().map(|s| s.zero_filled()));
        let m = stack(t, d, normalized.iter().map(|s| s.mask_f64()));
        let mut tape = Tape::new();
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.constant(p.clone()))
            .collect();
        let out = self.forward(&mut tape, &vars, &x, &m)?;
        let attention = out
            .attention
            .iter()
            .map(|&a| tape.value(a).clone())
            .collect();
        Ok((tape.value(out.reconstruction).clone(), attention))
    }

    /// Per-block `[T, T]` attention weights for one sample.
    pub fn attention(&self, sample: &TimeSeriesSample) -> Result<Vec<Tensor>> {
        let (_, att) = self.inference(std::slice::from_ref(sample))?;
        att.into_iter()
            .map(|a| {
                a.reshape(vec![self.n_steps, self.n_steps])
                    .map_err(ModelError::from)
            })
            .collect()
    }

    pub fn from_artifact(a: &ModelArtifact) -> Result<Self> {
        let config = SaitsConfig {
            d_model: a.usize("d_model")?,
            d_ff: a.usize("d_ff")?,
            lambda_mit: a.float("lambda_mit")?,
            mit_rate: a.float("mit_rate")?,
            seed: a.int("seed")? as u64,
        };
        let mut m = SaitsLite::new(config, a.usize("n_steps")?, a.usize("n_features")?)?;
        let shapes = m.param_shapes();
        m.params = param_names()
            .zip(&shapes)
            .map(|(name, s)| a.tensor_shaped(&name, s))
            .collect::<Result<_>>()?;
        m.norm = a.norm_stats()?.clone();
        if m.norm.n_features() != m.n_features {
            return Err(ModelError::format(
                "normalization statistics do not match the feature count",
            ));
        }
        Ok(m)
    }
}

fn param_names() -> impl Iterator<Item = String> {
    (0..N_BLOCKS).flat_map(|b| NAMES.iter().map(move |n| format!("block{b}.{n}")))
}

impl PotsModel for SaitsLite {
    fn kind(&self) -> ModelKind {
        ModelKind::SaitsLite
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn n_steps(&self) -> Option<usize> {
        Some(self.n_steps)
    }

    fn impute(&self, data: &dyn DatasetAccess) -> Result<Vec<Vec<f64>>> {
        check_compatible(self, data)?;
        let cells = self.n_steps * self.n_features;
        let mut out = Vec::with_capacity(data.len());
        for_each_chunk(data, |samples| {
            let (recon, _) = self.inference(&samples)?;
            for (s, grid) in samples.iter().zip(recon.data().chunks(cells)) {
                let mut filled = self.norm.invert(grid);
                restore_observed(s, &mut filled);
                out.push(filled);
            }
            Ok(())
        })?;
        Ok(out)
    }

    fn to_artifact(&self) -> ModelArtifact {
        let mut a = ModelArtifact::new(ModelKind::SaitsLite);
        a.set_usize("n_steps", self.n_steps)
            .set_usize("n_features", self.n_features)
            .set_usize("d_model", self.config.d_model)
            .set_usize("d_ff", self.config.d_ff)
            .set_float("lambda_mit", self.config.lambda_mit)
            .set_float("mit_rate", self.config.mit_rate)
            .set_int("seed", self.config.seed as i64);
        for (name, p) in param_names().zip(&self.params) {
            a.push_tensor(&name, p.clone());
        }
        a.norm = Some(self.norm.clone());
        a
    }
}

impl Trainable for SaitsLite {
    type Prepared = SaitsItem;

    fn parameters(&self) -> Vec<Tensor> {
        self.params.clone()
    }

    fn set_parameters(&mut self, params: Vec<Tensor>) -> Result<()> {
        check_shapes(&params, &self.param_shapes())?;
        self.params = params;
        Ok(())
    }

    fn prepare_training(&mut self, train: &dyn DatasetAccess) -> Result<()> {
        self.norm = NormStats::fit(train)?;
        Ok(())
    }

    fn prepare_batch(
        &self,
        samples: Vec<TimeSeriesSample>,
        ctx: BatchContext,
    ) -> Result<Vec<SaitsItem>> {
        let mut rng = ctx.rng();
        Ok(samples
            .iter()
            .map(|s| {
                let s = self.norm.apply_sample(s);
                let held = mcar_cells(s.mask(), self.config.mit_rate, &mut rng);
                let mut indicating = vec![0.0; s.values().len()];
                for &c in &held {
                    indicating[c] = 1.0;
                }
                let target = s.zero_filled();
                let visible = s.without_cells(&held);
                SaitsItem {
                    input: visible.zero_filled(),
                    mask: visible.mask_f64(),
                    target,
                    indicating,
                }
            })
            .collect())
    }

    fn loss_denominators(&self, batch: &[SaitsItem]) -> Vec<f64> {
        let ort: f64 = batch.iter().flat_map(|b| &b.mask).sum();
        let mit: f64 = batch.iter().flat_map(|b| &b.indicating).sum();
        vec![ort, mit]
    }

    /// Observed-cell reconstruction error plus `lambda_mit` times the
    /// held-out error; an empty term contributes zero.
    fn shard_loss(
        &self,
        tape: &mut Tape,
        params: &[Var],
        shard: &[SaitsItem],
        denominators: &[f64],
    ) -> Result<Var> {
        let (t, d) = (self.n_steps, self.n_features);
        let x = stack(t, d, shard.iter().map(|s| s.input.clone()));
        let m = stack(t, d, shard.iter().map(|s| s.mask.clone()));
        let target = tape.constant(stack(t, d, shard.iter().map(|s| s.target.clone())));
        let ind = stack(t, d, shard.iter().map(|s| s.indicating.clone()));
        let out = self.forward(tape, params, &x, &m)?;
        let xhat = out.reconstruction;
        let mut terms = Vec::new();
        if denominators[0] > 0.0 {
            terms.push(tape.masked_squared_error(xhat, target, &m, denominators[0])?);
        }
        if denominators[1] > 0.0 && self.config.lambda_mit > 0.0 {
            let mit = tape.masked_squared_error(xhat, target, &ind, denominators[1])?;
            terms.push(tape.scale(mit, self.config.lambda_mit));
        }
        let mut loss = match terms.first() {
            Some(&first) => first,
            None => {
                let s = tape.reduce_sum(xhat);
                tape.scale(s, 0.0)
            }
        };
        for &term in &terms[1.min(terms.len())..] {
            loss = tape.add(loss, term)?;
        }
        Ok(loss)
    }

    /// Masked MSE on a seeded hold-out of the validation set, in data units.
    fn validation_metric(
        &self,
        val: &dyn DatasetAccess,
        _metric: SelectionMetric,
        seed: u64,
    ) -> Result<f64> {
        let rate = if self.config.mit_rate > 0.0 {
            self.config.mit_rate
        } else {
            0.2
        };
        let view = inject_mcar(&materialize(val)?, rate, seed)?;
        if view.n_indicated() == 0 {
            return Err(ModelError::invalid("validation hold-out selected no cells"));
        }
        let imputed = self.impute(&view.corrupted)?;
        let pred: Vec<f64> = imputed.into_iter().flatten().collect();
        let target: Vec<f64> = view
            .original
            .samples()
            .iter()
            .flat_map(|s| s.values().to_vec())
            .collect();
        let mask: Vec<bool> = view.indicating.iter().flatten().copied().collect();
        Ok(masked_mse(&pred, &target, &mask)?)
    }
}
