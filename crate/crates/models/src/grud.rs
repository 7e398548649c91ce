//! Recurrent classifier with trainable input and hidden-state decay.

use pots_core::metrics::accuracy;
use pots_core::{compute_delta, DatasetAccess, NormStats, TimeSeriesSample};
use pots_tensor::{Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::api::{check_compatible, for_each_chunk, ModelKind, PotsModel};
use crate::artifact::ModelArtifact;
use crate::error::{ModelError, Result};
use crate::init::{check_shapes, uniform, xavier};
use crate::train::{BatchContext, SelectionMetric, Trainable};

const NAMES: [&str; 15] = [
    "w_gx", "b_gx", "w_gh", "b_gh", "wz", "uz", "bz", "wr", "ur", "br", "wn", "un", "bn", "wo",
    "bo",
];

/// `γ[d] = exp(−max(0, w[d]·δ[d] + b[d]))`, always in `(0, 1]` for finite input.
pub fn decay(delta: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    delta
        .iter()
        .zip(w)
        .zip(b)
        .map(|((&d, &w), &b)| (-(w * d + b).max(0.0)).exp())
        .collect()
}

/// Input estimate `m·x + (1−m)·(γ·x_last + (1−γ)·x̄)`.
pub fn input_estimate(
    x: &[f64],
    m: &[f64],
    x_last: &[f64],
    gamma: &[f64],
    x_mean: &[f64],
) -> Vec<f64> {
    (0..x.len())
        .map(|d| m[d] * x[d] + (1.0 - m[d]) * (gamma[d] * x_last[d] + (1.0 - gamma[d]) * x_mean[d]))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrudConfig {
    pub hidden_size: usize,
    pub seed: u64,
}

impl Default for GrudConfig {
    fn default() -> Self {
        GrudConfig {
            hidden_size: 256,
            seed: 0,
        }
    }
}

/// One sample as the recurrence consumes it; all grids are row-major `T×D`.
#[derive(Debug, Clone)]
pub struct GrudItem {
    pub x: Vec<f64>,
    pub mask: Vec<f64>,
    pub delta: Vec<f64>,
    /// Last observation strictly before each step, or the feature mean.
    pub x_last: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrudLite {
    config: GrudConfig,
    n_features: usize,
    n_classes: usize,
    norm: NormStats,
    /// Empirical feature means in model (standardized) coordinates.
    x_mean: Vec<f64>,
    params: Vec<Tensor>,
}

impl GrudLite {
    pub fn new(config: GrudConfig, n_features: usize, n_classes: usize) -> Result<Self> {
        if config.hidden_size == 0 || n_features == 0 || n_classes < 2 {
            return Err(ModelError::invalid(
                "hidden size and feature count must be positive and classes at least 2",
            ));
        }
        let (d, h, c) = (n_features, config.hidden_size, n_classes);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let bound = 1.0 / (h as f64).sqrt();
        let mut params = vec![
            uniform(&mut rng, &[d], bound),
            Tensor::zeros(&[d]),
            uniform(&mut rng, &[d, h], bound),
            Tensor::zeros(&[h]),
        ];
        for _ in 0..3 {
            params.push(uniform(&mut rng, &[2 * d, h], bound));
            params.push(uniform(&mut rng, &[h, h], bound));
            params.push(Tensor::zeros(&[h]));
        }
        params.push(xavier(&mut rng, h, c));
        params.push(Tensor::zeros(&[c]));
        Ok(GrudLite {
            config,
            n_features,
            n_classes,
            norm: NormStats::identity(n_features),
            x_mean: vec![0.0; n_features],
            params,
        })
    }

    /// Every parameter zero; predicts the uniform distribution.
    pub fn zeroed(config: GrudConfig, n_features: usize, n_classes: usize) -> Result<Self> {
        let mut m = Self::new(config, n_features, n_classes)?;
        m.params = m.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Ok(m)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.params.iter().map(|p| p.shape().to_vec()).collect()
    }

    /// Converts a raw sample; `label` defaults to 0 for unlabeled inference.
    pub fn prepare_sample(&self, s: &TimeSeriesSample) -> Result<GrudItem> {
        let d = self.n_features;
        let n = self.norm.apply_sample(s);
        let delta = compute_delta(s.timestamps(), s.mask(), d)?.into_data();
        let mut x_last = Vec::with_capacity(n.values().len());
        let mut last = self.x_mean.clone();
        for (t, row) in n.values().chunks(d).enumerate() {
            x_last.extend_from_slice(&last);
            for (f, &v) in row.iter().enumerate() {
                if n.mask()[t * d + f] {
                    last[f] = v;
                }
            }
        }
        if let Some(l) = s.label() {
            if l >= self.n_classes {
                return Err(ModelError::invalid(format!(
                    "sample {} has label {l} but the model has {} classes",
                    s.sample_id(),
                    self.n_classes
                )));
            }
        }
        Ok(GrudItem {
            x: n.zero_filled(),
            mask: n.mask_f64(),
            delta,
            x_last,
            label: s.label().unwrap_or(0),
        })
    }

    /// Unnormalized class scores `[B, C]` after unrolling the recurrence.
    pub fn logits(&self, tape: &mut Tape, params: &[Var], items: &[GrudItem]) -> Result<Var> {
        let (d, h) = (self.n_features, self.config.hidden_size);
        let b = items.len();
        let steps = items.first().map(|i| i.x.len() / d).unwrap_or(0);
        if items.iter().any(|i| i.x.len() != steps * d) {
            return Err(ModelError::invalid("batch items differ in length"));
        }
        let p = params;
        let row = |grid: &dyn Fn(&GrudItem) -> &[f64], t: usize| -> Tensor {
            let data = items
                .iter()
                .flat_map(|i| grid(i)[t * d..(t + 1) * d].to_vec())
                .collect();
            Tensor::new(vec![b, d], data).expect("batch row shape")
        };
        let x_mean = tape.constant(Tensor::vector(self.x_mean.clone()));
        let mut state = tape.constant(Tensor::zeros(&[b, h]));
        for t in 0..steps {
            let x = row(&|i| &i.x, t);
            let m = row(&|i| &i.mask, t);
            let last = row(&|i| &i.x_last, t);
            let observed: Vec<f64> = x.data().iter().zip(m.data()).map(|(a, b)| a * b).collect();
            let gap: Vec<f64> = last
                .data()
                .iter()
                .enumerate()
                .map(|(k, v)| v - self.x_mean[k % d])
                .collect();
            let unobserved: Vec<f64> = m.data().iter().map(|v| 1.0 - v).collect();
            let observed = tape.constant(Tensor::new(vec![b, d], observed)?);
            let gap = tape.constant(Tensor::new(vec![b, d], gap)?);
            let unobserved = tape.constant(Tensor::new(vec![b, d], unobserved)?);
            let delta = tape.constant(row(&|i| &i.delta, t));
            let m = tape.constant(m);

            let gx = tape.mul(delta, p[0])?;
            let gx = tape.add(gx, p[1])?;
            let gx = self.neg_exp_relu(tape, gx);
            let carried = tape.mul(gx, gap)?;
            let carried = tape.add(carried, x_mean)?;
            let carried = tape.mul(carried, unobserved)?;
            let x_hat = tape.add(carried, observed)?;

            let gh = tape.matmul(delta, p[2])?;
            let gh = tape.add(gh, p[3])?;
            let gh = self.neg_exp_relu(tape, gh);
            state = tape.mul(state, gh)?;

            let input = tape.concat(&[x_hat, m])?;
            let z = self.gate(tape, input, state, &p[4..7])?;
            let z = tape.sigmoid(z);
            let r = self.gate(tape, input, state, &p[7..10])?;
            let r = tape.sigmoid(r);
            let reset = tape.mul(r, state)?;
            let n = self.gate(tape, input, reset, &p[10..13])?;
            let n = tape.tanh(n);
            let diff = tape.sub(state, n)?;
            let keep = tape.mul(z, diff)?;
            state = tape.add(n, keep)?;
        }
        let out = tape.matmul(state, p[13])?;
        Ok(tape.add(out, p[14])?)
    }

    fn neg_exp_relu(&self, tape: &mut Tape, a: Var) -> Var {
        let r = tape.relu(a);
        let n = tape.scale(r, -1.0);
        tape.exp(n)
    }

    fn gate(&self, tape: &mut Tape, input: Var, state: Var, p: &[Var]) -> Result<Var> {
        let a = tape.matmul(input, p[0])?;
        let b = tape.matmul(state, p[1])?;
        let s = tape.add(a, b)?;
        Ok(tape.add(s, p[2])?)
    }

    fn probabilities(&self, samples: &[TimeSeriesSample]) -> Result<Vec<Vec<f64>>> {
        let items = samples
            .iter()
            .map(|s| self.prepare_sample(s))
            .collect::<Result<Vec<_>>>()?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.constant(p.clone()))
            .collect();
        let logits = self.logits(&mut tape, &vars, &items)?;
        let probs = tape.softmax(logits);
        Ok(tape
            .value(probs)
            .data()
            .chunks(self.n_classes)
            .map(<[f64]>::to_vec)
            .collect())
    }

    pub fn from_artifact(a: &ModelArtifact) -> Result<Self> {
        let config = GrudConfig {
            hidden_size: a.usize("hidden_size")?,
            seed: a.int("seed")? as u64,
        };
        let mut m = GrudLite::new(config, a.usize("n_features")?, a.usize("n_classes")?)?;
        let shapes = m.param_shapes();
        m.params = NAMES
            .iter()
            .zip(&shapes)
            .map(|(n, s)| a.tensor_shaped(n, s))
            .collect::<Result<_>>()?;
        m.x_mean = a.tensor_shaped("x_mean", &[m.n_features])?.into_data();
        m.norm = a.norm_stats()?.clone();
        if m.norm.n_features() != m.n_features {
            return Err(ModelError::format(
                "normalization statistics do not match the feature count",
            ));
        }
        Ok(m)
    }
}

impl PotsModel for GrudLite {
    fn kind(&self) -> ModelKind {
        ModelKind::GrudLite
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn classify(&self, data: &dyn DatasetAccess) -> Result<Vec<Vec<f64>>> {
        check_compatible(self, data)?;
        let mut out = Vec::with_capacity(data.len());
        for_each_chunk(data, |samples| {
            out.extend(self.probabilities(&samples)?);
            Ok(())
        })?;
        Ok(out)
    }

    fn to_artifact(&self) -> ModelArtifact {
        let mut a = ModelArtifact::new(ModelKind::GrudLite);
        a.set_usize("n_features", self.n_features)
            .set_usize("n_classes", self.n_classes)
            .set_usize("hidden_size", self.config.hidden_size)
            .set_int("seed", self.config.seed as i64);
        for (n, p) in NAMES.iter().zip(&self.params) {
            a.push_tensor(n, p.clone());
        }
        a.push_tensor("x_mean", Tensor::vector(self.x_mean.clone()));
        a.norm = Some(self.norm.clone());
        a
    }
}

impl Trainable for GrudLite {
    type Prepared = GrudItem;

    fn parameters(&self) -> Vec<Tensor> {
        self.params.clone()
    }

    fn set_parameters(&mut self, params: Vec<Tensor>) -> Result<()> {
        check_shapes(&params, &self.param_shapes())?;
        self.params = params;
        Ok(())
    }

    /// Standardizes inputs with training statistics, which makes the
    /// observed feature means zero in model coordinates.
    fn prepare_training(&mut self, train: &dyn DatasetAccess) -> Result<()> {
        if let Some(c) = train.n_classes() {
            if c > self.n_classes {
                return Err(ModelError::invalid(format!(
                    "training set has {c} classes, model has {}",
                    self.n_classes
                )));
            }
        }
        self.norm = NormStats::fit(train)?;
        self.x_mean = vec![0.0; self.n_features];
        Ok(())
    }

    fn prepare_batch(
        &self,
        samples: Vec<TimeSeriesSample>,
        _ctx: BatchContext,
    ) -> Result<Vec<GrudItem>> {
        samples
            .iter()
            .map(|s| {
                if s.label().is_none() {
                    return Err(ModelError::invalid(format!(
                        "sample {} has no label",
                        s.sample_id()
                    )));
                }
                self.prepare_sample(s)
            })
            .collect()
    }

    fn loss_denominators(&self, batch: &[GrudItem]) -> Vec<f64> {
        vec![batch.len() as f64]
    }

    /// Summed cross-entropy over the shard divided by the batch size.
    fn shard_loss(
        &self,
        tape: &mut Tape,
        params: &[Var],
        shard: &[GrudItem],
        denominators: &[f64],
    ) -> Result<Var> {
        let logits = self.logits(tape, params, shard)?;
        let labels: Vec<usize> = shard.iter().map(|i| i.label).collect();
        Ok(tape.cross_entropy_sum(logits, &labels, denominators[0])?)
    }

    /// Mean cross-entropy or accuracy over the labeled validation samples.
    fn validation_metric(
        &self,
        val: &dyn DatasetAccess,
        metric: SelectionMetric,
        _seed: u64,
    ) -> Result<f64> {
        let probs = self.classify(val)?;
        let mut labels = Vec::with_capacity(probs.len());
        for_each_chunk(val, |samples| {
            for s in &samples {
                labels.push(s.label().ok_or_else(|| {
                    ModelError::invalid(format!("validation sample {} has no label", s.sample_id()))
                })?);
            }
            Ok(())
        })?;
        Ok(match metric {
            SelectionMetric::ValLoss => {
                let total: f64 = probs
                    .iter()
                    .zip(&labels)
                    .map(|(p, &l)| -p[l].max(1e-300).ln())
                    .sum();
                total / labels.len() as f64
            }
            SelectionMetric::ValAccuracy => {
                let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
                accuracy(&pred, &labels)?
            }
        })
    }
}

/// First index of the largest entry.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use pots_core::{generate_synthetic, SyntheticSpec};

    #[test]
    fn decay_examples() {
        assert_eq!(decay(&[3.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]), vec![1.0, 1.0]);
        assert!((decay(&[1.0], &[1.0], &[0.0])[0] - (-1.0f64).exp()).abs() < 1e-15);
        assert!(decay(&[50.0], &[1.0], &[0.0])[0] < 1e-20);
        assert_eq!(decay(&[2.0], &[-4.0], &[1.0]), vec![1.0]);
    }

    #[test]
    fn input_estimate_examples() {
        let x = [5.0, 6.0];
        assert_eq!(
            input_estimate(&x, &[1.0, 1.0], &[0.0, 0.0], &[0.3, 0.0], &[9.0, 9.0]),
            x.to_vec()
        );
        assert_eq!(
            input_estimate(&x, &[0.0, 0.0], &[2.0, 3.0], &[1.0, 1.0], &[9.0, 9.0]),
            vec![2.0, 3.0]
        );
        assert_eq!(
            input_estimate(&x, &[0.0, 0.0], &[2.0, 3.0], &[0.0, 0.0], &[9.0, 8.0]),
            vec![9.0, 8.0]
        );
    }

    fn data() -> pots_core::PotsDataset {
        generate_synthetic(&SyntheticSpec {
            n_samples: 5,
            n_steps: 4,
            n_features: 2,
            n_classes: 3,
            missing_rate: 0.3,
            seed: 4,
        })
        .unwrap()
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = GrudLite::zeroed(
            GrudConfig {
                hidden_size: 3,
                seed: 0,
            },
            2,
            3,
        )
        .unwrap();
        for row in m.classify(&data()).unwrap() {
            for p in row {
                assert!((p - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rows_are_distributions() {
        let m = GrudLite::new(
            GrudConfig {
                hidden_size: 5,
                seed: 2,
            },
            2,
            3,
        )
        .unwrap();
        for row in m.classify(&data()).unwrap() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn x_last_holds_the_previous_observation() {
        let m = GrudLite::new(
            GrudConfig {
                hidden_size: 2,
                seed: 0,
            },
            1,
            2,
        )
        .unwrap();
        let s = TimeSeriesSample::new(
            0,
            vec![0.0, 1.0, 2.0, 3.0],
            vec![f64::NAN, 4.0, f64::NAN, 6.0],
            1,
            None,
        )
        .unwrap();
        let item = m.prepare_sample(&s).unwrap();
        assert_eq!(item.x_last, vec![0.0, 0.0, 4.0, 4.0]);
        assert_eq!(item.delta, vec![0.0, 1.0, 1.0, 2.0]);
    }
}
