//! Temporal matrix factorization with a diagonal autoregressive prior on
//! the temporal factors, fitted by alternating ridge least squares.

use nalgebra::{DMatrix, DVector};
use pots_core::{materialize, DatasetAccess};
use pots_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::api::{check_compatible, ModelKind, PotsModel};
use crate::artifact::ModelArtifact;
use crate::error::{ModelError, Result};
use crate::init::uniform;

#[derive(Debug, Clone, PartialEq)]
pub struct TmfConfig {
    pub rank: usize,
    pub ar_order: usize,
    pub lambda_w: f64,
    pub lambda_f: f64,
    pub lambda_a: f64,
    pub max_iters: usize,
    /// Stop once the relative objective decrease falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for TmfConfig {
    fn default() -> Self {
        TmfConfig {
            rank: 2,
            ar_order: 2,
            lambda_w: 0.1,
            lambda_f: 0.1,
            lambda_a: 0.1,
            max_iters: 200,
            tol: 1e-10,
            seed: 0,
        }
    }
}

/// `Y ≈ W·Fᵀ` with `f_t ≈ Σ_l a_l ⊙ f_{t−l}`. All matrices row-major;
/// `a` is `L×R` with row `l` holding the lag-`l+1` coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Factors {
    pub n: usize,
    pub t: usize,
    pub rank: usize,
    pub w: Vec<f64>,
    pub f: Vec<f64>,
    pub a: Vec<f64>,
}

impl Factors {
    pub fn ar_order(&self) -> usize {
        self.a.len() / self.rank
    }

    fn w_row(&self, i: usize) -> &[f64] {
        &self.w[i * self.rank..(i + 1) * self.rank]
    }

    fn f_row(&self, t: usize) -> &[f64] {
        &self.f[t * self.rank..(t + 1) * self.rank]
    }

    /// AR prediction of component `r` at step `t ≥ L`, skipping lag `skip`.
    fn ar_pred(&self, t: usize, r: usize, skip: Option<usize>) -> f64 {
        (1..=self.ar_order())
            .filter(|&l| Some(l) != skip)
            .map(|l| self.a[(l - 1) * self.rank + r] * self.f[(t - l) * self.rank + r])
            .sum()
    }

    pub fn reconstruct(&self, i: usize, t: usize) -> f64 {
        dot(self.w_row(i), self.f_row(t))
    }

    /// Temporal factors for steps `T..T+h`, rolled forward with the AR
    /// coefficients.
    pub fn roll_forward(&self, h: usize) -> Result<Vec<f64>> {
        if h == 0 {
            return Err(ModelError::invalid("forecast horizon must be at least 1"));
        }
        let (r, l) = (self.rank, self.ar_order());
        let mut f = self.f.clone();
        for s in self.t..self.t + h {
            for c in 0..r {
                let v = (1..=l)
                    .map(|lag| self.a[(lag - 1) * r + c] * f[(s - lag) * r + c])
                    .sum();
                f.push(v);
            }
        }
        Ok(f.split_off(self.t * r))
    }

    /// Predictions `h` steps past the training window for series with
    /// loadings `w` (row-major `m×R`), as `m×h`.
    pub fn forecast_with(&self, w: &[f64], h: usize) -> Result<Vec<f64>> {
        let future = self.roll_forward(h)?;
        Ok(w.chunks(self.rank)
            .flat_map(|wi| future.chunks(self.rank).map(move |fj| dot(wi, fj)))
            .collect())
    }

    /// Training series forecasts, `N×h`.
    pub fn forecast(&self, h: usize) -> Result<Vec<f64>> {
        self.forecast_with(&self.w, h)
    }

    /// Ridge loadings of a new series given the learned temporal factors,
    /// using its observations within the training window.
    pub fn fold_in(&self, y: &[f64], mask: &[bool], lambda_w: f64) -> Vec<f64> {
        let r = self.rank;
        let mut h = DMatrix::<f64>::identity(r, r) * lambda_w;
        let mut b = DVector::<f64>::zeros(r);
        for t in 0..self.t.min(y.len()) {
            if mask[t] {
                add_outer(&mut h, &mut b, self.f_row(t), y[t]);
            }
        }
        solve_psd(h, b)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_outer(h: &mut DMatrix<f64>, b: &mut DVector<f64>, v: &[f64], y: f64) {
    for i in 0..v.len() {
        b[i] += y * v[i];
        for j in 0..v.len() {
            h[(i, j)] += v[i] * v[j];
        }
    }
}

/// Minimizer of `½xᵀHx − bᵀx` for symmetric positive semidefinite `H`:
/// Cholesky when definite, otherwise the minimum-norm SVD solution.
fn solve_psd(h: DMatrix<f64>, b: DVector<f64>) -> Vec<f64> {
    if let Some(ch) = h.clone().cholesky() {
        return ch.solve(&b).iter().copied().collect();
    }
    let svd = h.svd(true, true);
    let eps = svd.singular_values.max() * 1e-14;
    svd.solve(&b, eps)
        .map(|x| x.iter().copied().collect())
        .unwrap_or_else(|_| vec![0.0; b.len()])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TmfFit {
    pub factors: Factors,
    /// Objective before the first sweep and after each sweep.
    pub objective: Vec<f64>,
}

/// Masked squared error plus every penalty term.
pub fn objective(y: &[f64], mask: &[bool], fac: &Factors, config: &TmfConfig) -> f64 {
    let (n, t, r, l) = (fac.n, fac.t, fac.rank, fac.ar_order());
    let mut sse = 0.0;
    for i in 0..n {
        for s in 0..t {
            if mask[i * t + s] {
                let e = y[i * t + s] - fac.reconstruct(i, s);
                sse += e * e;
            }
        }
    }
    let mut ar = 0.0;
    for s in l..t {
        for c in 0..r {
            let e = fac.f[s * r + c] - fac.ar_pred(s, c, None);
            ar += e * e;
        }
    }
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    sse + config.lambda_w * sq(&fac.w) + config.lambda_f * ar + config.lambda_a * sq(&fac.a)
}

/// Fits `Y` (row-major `n×t`, missing where `mask` is false).
pub fn tmf_fit(y: &[f64], mask: &[bool], n: usize, t: usize, config: &TmfConfig) -> Result<TmfFit> {
    let (r, l) = (config.rank, config.ar_order);
    if r == 0 {
        return Err(ModelError::invalid("factorization rank must be at least 1"));
    }
    if l >= t {
        return Err(ModelError::invalid(format!(
            "AR order {l} must be below the series length {t}"
        )));
    }
    if y.len() != n * t || mask.len() != n * t {
        return Err(ModelError::invalid("series matrix does not match n×t"));
    }
    for lam in [config.lambda_w, config.lambda_f, config.lambda_a] {
        if !(lam >= 0.0 && lam.is_finite()) {
            return Err(ModelError::invalid(
                "ridge weights must be finite and non-negative",
            ));
        }
    }
    if let Some(i) = (0..n).find(|&i| !mask[i * t..(i + 1) * t].iter().any(|&m| m)) {
        return Err(ModelError::invalid(format!(
            "series {i} has no observations"
        )));
    }
    if let Some(s) = (0..t).find(|&s| !(0..n).any(|i| mask[i * t + s])) {
        return Err(ModelError::invalid(format!("step {s} has no observations")));
    }
    if mask.iter().zip(y).any(|(&m, v)| m && !v.is_finite()) {
        return Err(ModelError::invalid("observed entries must be finite"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut fac = Factors {
        n,
        t,
        rank: r,
        w: uniform(&mut rng, &[n, r], 1.0).into_data(),
        f: uniform(&mut rng, &[t, r], 1.0).into_data(),
        a: vec![0.0; l * r],
    };
    let mut history = vec![objective(y, mask, &fac, config)];
    for _ in 0..config.max_iters {
        update_w(y, mask, &mut fac, config);
        update_f(y, mask, &mut fac, config);
        update_a(&mut fac, config);
        let j = objective(y, mask, &fac, config);
        let prev = *history.last().expect("initial objective");
        history.push(j);
        if (prev - j) / prev.abs().max(1.0) < config.tol {
            break;
        }
    }
    Ok(TmfFit {
        factors: fac,
        objective: history,
    })
}

fn update_w(y: &[f64], mask: &[bool], fac: &mut Factors, config: &TmfConfig) {
    let t = fac.t;
    for i in 0..fac.n {
        let w = fac.fold_in(
            &y[i * t..(i + 1) * t],
            &mask[i * t..(i + 1) * t],
            config.lambda_w,
        );
        fac.w[i * fac.rank..(i + 1) * fac.rank].copy_from_slice(&w);
    }
}

/// Exact minimization over each `f_t` in ascending `t`, holding the rest.
fn update_f(y: &[f64], mask: &[bool], fac: &mut Factors, config: &TmfConfig) {
    let (n, t, r, l) = (fac.n, fac.t, fac.rank, fac.ar_order());
    let lf = config.lambda_f;
    for s in 0..t {
        let mut h = DMatrix::<f64>::zeros(r, r);
        let mut b = DVector::<f64>::zeros(r);
        for i in 0..n {
            if mask[i * t + s] {
                add_outer(&mut h, &mut b, fac.w_row(i), y[i * t + s]);
            }
        }
        if s >= l {
            for c in 0..r {
                h[(c, c)] += lf;
                b[c] += lf * fac.ar_pred(s, c, None);
            }
        }
        for lag in 1..=l {
            let later = s + lag;
            if later >= l && later < t {
                for c in 0..r {
                    let coef = fac.a[(lag - 1) * r + c];
                    let rest = fac.f[later * r + c] - fac.ar_pred(later, c, Some(lag));
                    h[(c, c)] += lf * coef * coef;
                    b[c] += lf * coef * rest;
                }
            }
        }
        let f = solve_psd(h, b);
        fac.f[s * r..(s + 1) * r].copy_from_slice(&f);
    }
}

/// Per-component ridge regression of `f_t` on its own lags.
fn update_a(fac: &mut Factors, config: &TmfConfig) {
    let (t, r, l) = (fac.t, fac.rank, fac.ar_order());
    for c in 0..r {
        let mut g = DMatrix::<f64>::identity(l, l) * config.lambda_a;
        let mut rhs = DVector::<f64>::zeros(l);
        for s in l..t {
            let lags: Vec<f64> = (1..=l).map(|lag| fac.f[(s - lag) * r + c]).collect();
            let mut hh = DMatrix::<f64>::zeros(l, l);
            let mut bb = DVector::<f64>::zeros(l);
            add_outer(&mut hh, &mut bb, &lags, fac.f[s * r + c]);
            g += hh * config.lambda_f;
            rhs += bb * config.lambda_f;
        }
        for (lag, v) in solve_psd(g, rhs).into_iter().enumerate() {
            fac.a[lag * r + c] = v;
        }
    }
}

/// One factorization per feature over the `N×T` matrix of that feature.
#[derive(Debug, Clone, PartialEq)]
pub struct TmfModel {
    config: TmfConfig,
    factors: Vec<Factors>,
}

impl TmfModel {
    /// Returns the model and each feature's objective history.
    pub fn fit(train: &dyn DatasetAccess, config: TmfConfig) -> Result<(Self, Vec<Vec<f64>>)> {
        let ds = materialize(train)?;
        let (n, t, d) = (ds.len(), ds.n_steps(), ds.n_features());
        let mut factors = Vec::with_capacity(d);
        let mut histories = Vec::with_capacity(d);
        for feature in 0..d {
            let mut y = Vec::with_capacity(n * t);
            let mut mask = Vec::with_capacity(n * t);
            for s in ds.samples() {
                for step in 0..t {
                    let i = step * d + feature;
                    y.push(if s.mask()[i] { s.values()[i] } else { 0.0 });
                    mask.push(s.mask()[i]);
                }
            }
            let fit = tmf_fit(&y, &mask, n, t, &config)
                .map_err(|e| ModelError::invalid(format!("feature {feature}: {e}")))?;
            factors.push(fit.factors);
            histories.push(fit.objective);
        }
        Ok((TmfModel { config, factors }, histories))
    }

    pub fn factors(&self) -> &[Factors] {
        &self.factors
    }

    pub fn training_steps(&self) -> usize {
        self.factors[0].t
    }

    pub fn from_artifact(a: &ModelArtifact) -> Result<Self> {
        let config = TmfConfig {
            rank: a.usize("rank")?,
            ar_order: a.usize("ar_order")?,
            lambda_w: a.float("lambda_w")?,
            lambda_f: a.float("lambda_f")?,
            lambda_a: a.float("lambda_a")?,
            max_iters: a.usize("max_iters")?,
            tol: a.float("tol")?,
            seed: a.int("seed")? as u64,
        };
        let (d, n, t) = (
            a.usize("n_features")?,
            a.usize("n_series")?,
            a.usize("t_train")?,
        );
        let (r, l) = (config.rank, config.ar_order);
        if d == 0 || r == 0 || l == 0 || l >= t {
            return Err(ModelError::format(
                "inconsistent factorization hyperparameters",
            ));
        }
        let factors = (0..d)
            .map(|f| {
                Ok(Factors {
                    n,
                    t,
                    rank: r,
                    w: a.tensor_shaped(&format!("feature{f}.w"), &[n, r])?
                        .into_data(),
                    f: a.tensor_shaped(&format!("feature{f}.f"), &[t, r])?
                        .into_data(),
                    a: a.tensor_shaped(&format!("feature{f}.a"), &[l, r])?
                        .into_data(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(TmfModel { config, factors })
    }
}

impl PotsModel for TmfModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Tmf
    }

    fn n_features(&self) -> usize {
        self.factors.len()
    }

    /// Folds each series into the learned temporal factors using its first
    /// `T_train` steps, then rolls forward `horizon` steps past them.
    fn forecast(&self, data: &dyn DatasetAccess, horizon: usize) -> Result<Vec<Vec<f64>>> {
        check_compatible(self, data)?;
        let t_train = self.training_steps();
        if data.n_steps() < t_train {
            return Err(ModelError::invalid(format!(
                "forecasting needs at least {t_train} steps per series, dataset has {}",
                data.n_steps()
            )));
        }
        if horizon == 0 {
            return Err(ModelError::invalid("forecast horizon must be at least 1"));
        }
        let ds = materialize(data)?;
        let d = self.factors.len();
        let mut out = Vec::with_capacity(ds.len());
        for s in ds.samples() {
            let mut grid = vec![0.0; horizon * d];
            for (feature, fac) in self.factors.iter().enumerate() {
                let y: Vec<f64> = (0..t_train).map(|t| s.values()[t * d + feature]).collect();
                let m: Vec<bool> = (0..t_train).map(|t| s.mask()[t * d + feature]).collect();
                let w = fac.fold_in(&y, &m, self.config.lambda_w);
                for (j, v) in fac.forecast_with(&w, horizon)?.into_iter().enumerate() {
                    grid[j * d + feature] = v;
                }
            }
            out.push(grid);
        }
        Ok(out)
    }

    fn to_artifact(&self) -> ModelArtifact {
        let c = &self.config;
        let f0 = &self.factors[0];
        let mut a = ModelArtifact::new(ModelKind::Tmf);
        a.set_usize("rank", c.rank)
            .set_usize("ar_order", c.ar_order)
            .set_float("lambda_w", c.lambda_w)
            .set_float("lambda_f", c.lambda_f)
            .set_float("lambda_a", c.lambda_a)
            .set_usize("max_iters", c.max_iters)
            .set_float("tol", c.tol)
            .set_int("seed", c.seed as i64)
            .set_usize("n_features", self.factors.len())
            .set_usize("n_series", f0.n)
            .set_usize("t_train", f0.t);
        for (i, fac) in self.factors.iter().enumerate() {
            let m = |rows: usize, v: &[f64]| {
                Tensor::matrix(rows, fac.rank, v.to_vec()).expect("factor shape")
            };
            a.push_tensor(&format!("feature{i}.w"), m(fac.n, &fac.w));
            a.push_tensor(&format!("feature{i}.f"), m(fac.t, &fac.f));
            a.push_tensor(&format!("feature{i}.a"), m(fac.ar_order(), &fac.a));
        }
        a
    }
}
