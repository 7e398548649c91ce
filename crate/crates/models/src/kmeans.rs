//! k-means with k-means++ seeding, and the impute-then-cluster model.

use pots_core::DatasetAccess;
use pots_tensor::Tensor;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::api::{check_compatible, ModelKind, PotsModel};
use crate::artifact::{model_from_artifact, ModelArtifact};
use crate::error::{ModelError, Result};

const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 2,
            max_iters: 100,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// Row-major `k×P`.
    pub centroids: Vec<f64>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Inertia of each assignment step, in order.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid (lowest index on ties) and its squared distance.
pub fn nearest(point: &[f64], centroids: &[f64], p: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks(p).enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(
    points: &[f64],
    centroids: &[f64],
    p: usize,
    labels: &mut [usize],
    dists: &mut [f64],
) -> f64 {
    let mut inertia = 0.0;
    for (i, x) in points.chunks(p).enumerate() {
        let (j, d) = nearest(x, centroids, p);
        labels[i] = j;
        dists[i] = d;
        inertia += d;
    }
    inertia
}

fn plus_plus(points: &[f64], n: usize, p: usize, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut centroids = Vec::with_capacity(k * p);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&points[first * p..(first + 1) * p]);
    let mut d2: Vec<f64> = points
        .chunks(p)
        .map(|x| sq_dist(x, &centroids[..p]))
        .collect();
    for _ in 1..k {
        let pick = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            Err(_) => rng.random_range(0..n),
        };
        let c = points[pick * p..(pick + 1) * p].to_vec();
        for (x, d) in points.chunks(p).zip(d2.iter_mut()) {
            *d = d.min(sq_dist(x, &c));
        }
        centroids.extend(c);
    }
    centroids
}

/// Lloyd's algorithm on `n×p` row-major `points`. Empty clusters move to
/// the point farthest from its centroid. Labels always refer to the
/// returned centroids.
pub fn kmeans_fit(points: &[f64], p: usize, config: &KMeansConfig) -> Result<KMeansFit> {
    if p == 0 || !points.len().is_multiple_of(p) {
        return Err(ModelError::invalid(
            "points must form an n×p matrix with p > 0",
        ));
    }
    let n = points.len() / p;
    let k = config.k;
    if k == 0 || n < k {
        return Err(ModelError::invalid(format!(
            "k-means needs 1 ≤ k ≤ n, got k={k}, n={n}"
        )));
    }
    if !points.iter().all(|v| v.is_finite()) {
        return Err(ModelError::invalid("k-means points must be finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centroids = plus_plus(points, n, p, k, &mut rng);
    let mut labels = vec![0; n];
    let mut dists = vec![0.0; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..config.max_iters {
        iterations += 1;
        history.push(assign(points, &centroids, p, &mut labels, &mut dists));
        let mut sums = vec![0.0; k * p];
        let mut counts = vec![0usize; k];
        for (x, &l) in points.chunks(p).zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l * p..(l + 1) * p].iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut next = centroids.clone();
        for j in 0..k {
            if counts[j] > 0 {
                for (c, s) in next[j * p..(j + 1) * p]
                    .iter_mut()
                    .zip(&sums[j * p..(j + 1) * p])
                {
                    *c = s / counts[j] as f64;
                }
            }
        }
        for j in (0..k).filter(|&j| counts[j] == 0) {
            let far = (0..n).fold(0, |b, i| if dists[i] > dists[b] { i } else { b });
            next[j * p..(j + 1) * p].copy_from_slice(&points[far * p..(far + 1) * p]);
            dists[far] = 0.0;
        }
        let shift = centroids
            .chunks(p)
            .zip(next.chunks(p))
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < config.tol {
            break;
        }
    }
    let inertia = assign(points, &centroids, p, &mut labels, &mut dists);
    Ok(KMeansFit {
        centroids,
        labels,
        inertia,
        inertia_history: history,
        iterations,
    })
}

/// Impute with an inner model, flatten to `T·D`, standardize with training
/// statistics, then assign to the nearest k-means centroid.
pub struct TwoStageKMeans {
    inner: Box<dyn PotsModel>,
    config: KMeansConfig,
    n_steps: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
    centroids: Vec<f64>,
}

impl TwoStageKMeans {
    /// Fits the clustering stage; returns the model and the training labels.
    pub fn fit(
        inner: Box<dyn PotsModel>,
        train: &dyn DatasetAccess,
        config: KMeansConfig,
    ) -> Result<(Self, KMeansFit)> {
        check_compatible(inner.as_ref(), train)?;
        let completed = inner.impute(train)?;
        let p = train.n_steps() * train.n_features();
        let n = completed.len() as f64;
        let mut mean = vec![0.0; p];
        for row in &completed {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; p];
        for row in &completed {
            for ((s, v), m) in std.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let std: Vec<f64> = std.into_iter().map(|v| v.sqrt().max(STD_FLOOR)).collect();
        let mut model = TwoStageKMeans {
            inner,
            config,
            n_steps: train.n_steps(),
            mean,
            std,
            centroids: Vec::new(),
        };
        let points = model.standardize(completed);
        let fit = kmeans_fit(&points, p, &model.config)?;
        model.centroids = fit.centroids.clone();
        Ok((model, fit))
    }

    fn standardize(&self, rows: Vec<Vec<f64>>) -> Vec<f64> {
        rows.into_iter()
            .flat_map(|row| {
                row.into_iter()
                    .zip(&self.mean)
                    .zip(&self.std)
                    .map(|((v, m), s)| (v - m) / s)
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn inner(&self) -> &dyn PotsModel {
        self.inner.as_ref()
    }

    /// Standardized flattened points the centroids live among.
    pub fn embed(&self, data: &dyn DatasetAccess) -> Result<Vec<f64>> {
        check_compatible(self, data)?;
        Ok(self.standardize(self.inner.impute(data)?))
    }

    pub fn from_artifact(a: &ModelArtifact) -> Result<Self> {
        let inner = model_from_artifact(&a.extract("inner.")?)?;
        let (t, k) = (a.usize("n_steps")?, a.usize("k")?);
        let p = t * inner.n_features();
        let config = KMeansConfig {
            k,
            max_iters: a.usize("max_iters")?,
            tol: a.float("tol")?,
            seed: a.int("seed")? as u64,
        };
        Ok(TwoStageKMeans {
            config,
            n_steps: t,
            mean: a.tensor_shaped("mean", &[p])?.into_data(),
            std: a.tensor_shaped("std", &[p])?.into_data(),
            centroids: a.tensor_shaped("centroids", &[k, p])?.into_data(),
            inner,
        })
    }
}

impl PotsModel for TwoStageKMeans {
    fn kind(&self) -> ModelKind {
        ModelKind::TwoStageKMeans
    }

    fn n_features(&self) -> usize {
        self.inner.n_features()
    }

    fn n_steps(&self) -> Option<usize> {
        Some(self.n_steps)
    }

    fn cluster(&self, data: &dyn DatasetAccess) -> Result<Vec<usize>> {
        let points = self.embed(data)?;
        let p = self.mean.len();
        Ok(points
            .chunks(p)
            .map(|x| nearest(x, &self.centroids, p).0)
            .collect())
    }

    fn to_artifact(&self) -> ModelArtifact {
        let p = self.mean.len();
        let mut a = ModelArtifact::new(ModelKind::TwoStageKMeans);
        a.set_usize("n_steps", self.n_steps)
            .set_usize("k", self.config.k)
            .set_usize("max_iters", self.config.max_iters)
            .set_float("tol", self.config.tol)
            .set_int("seed", self.config.seed as i64);
        a.push_tensor("mean", Tensor::vector(self.mean.clone()));
        a.push_tensor("std", Tensor::vector(self.std.clone()));
        a.push_tensor(
            "centroids",
            Tensor::matrix(self.config.k, p, self.centroids.clone()).expect("k×P centroids"),
        );
        a.embed("inner.", &self.inner.to_artifact());
        a
    }
}
