use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use pots_core::metrics::{
    accuracy, binary_classification_metrics, masked_mae, masked_mre, masked_mse, masked_rmse,
    purity, rand_index,
};
use pots_core::store::MAGIC as POTS_MAGIC;
use pots_core::{
    export_csv, generate_synthetic, ingest_csv, inject_mcar, materialize, open_readonly, split,
    write_container, CorruptedView, CsvSchema, PotsDataset, SyntheticSpec, TimeSeriesSample,
};
use pots_models::{
    load_artifact, model_from_artifact, parallel_fit, save_model, GrudConfig, GrudLite, HyperValue,
    KMeansConfig, LocfImputer, MeanImputer, ModelArtifact, ModelError, ModelKind, PotsModel,
    SaitsConfig, SaitsLite, Task, TmfConfig, TmfModel, TwoStageKMeans,
};

use crate::config::{seed_offset, Params, Settings};
use crate::error::{CliError, Result};

const HOLDOUT_FRACTION: f64 = 0.2;
const ARTIFACT_MAGIC: &[u8; 4] = b"PMDL";

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::data(path, e)
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads a `.csv` (long format) or a `.pots` container fully into memory.
pub fn load_dataset(path: &Path) -> Result<PotsDataset> {
    if is_csv(path) {
        ingest_csv(path, &CsvSchema::default()).map_err(|e| CliError::core(path, e))
    } else {
        let handle = open_readonly(path).map_err(|e| CliError::core(path, e))?;
        let labelled = handle.header().labels_present();
        let ds =
            materialize(&pots_core::lazy_dataset(handle)).map_err(|e| CliError::core(path, e))?;
        if !labelled {
            return Ok(ds);
        }
        // containers do not record the class count; infer it from labels
        let classes = ds
            .samples()
            .iter()
            .filter_map(|s| s.label())
            .max()
            .map(|m| m + 1);
        let samples = ds.into_samples();
        PotsDataset::from_samples(samples, classes).map_err(|e| CliError::core(path, e))
    }
}

fn save_dataset(ds: &PotsDataset, path: &Path) -> Result<()> {
    let r = if is_csv(path) {
        export_csv(ds, path)
    } else {
        write_container(ds, path)
    };
    r.map_err(|e| CliError::core(path, e))
}

/// `X.pots` → `X.originals.pots`; the extension is kept.
pub fn originals_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.originals.{}", ext.to_string_lossy()),
        None => format!("{stem}.originals"),
    };
    path.with_file_name(name)
}

fn distinct(paths: &[(&str, &Path)]) -> Result<()> {
    for (i, (fa, a)) in paths.iter().enumerate() {
        for (fb, b) in &paths[i + 1..] {
            if a == b {
                return Err(CliError::usage(format!(
                    "{fa} and {fb} name the same file {}",
                    a.display()
                )));
            }
        }
    }
    Ok(())
}

fn write_line(out: &mut dyn Write, line: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| CliError::Data(format!("stdout: {e}")))
}

fn report(out: &mut dyn Write, entries: &[(&str, String)]) -> Result<()> {
    for (k, v) in entries {
        write_line(out, format_args!("{k}={v}"))?;
    }
    Ok(())
}

pub fn gen_data(s: &Settings, out: &mut dyn Write) -> Result<()> {
    let path = s.require_path(&s.out, "--out")?;
    let spec = SyntheticSpec {
        n_samples: s.n_samples.unwrap_or(500),
        n_steps: s.n_steps.unwrap_or(24),
        n_features: s.n_features.unwrap_or(5),
        n_classes: s.n_classes.unwrap_or(3),
        missing_rate: s.missing_rate.unwrap_or(0.1),
        seed: s.stage_seed(seed_offset::GENERATE),
    };
    let ds =
        generate_synthetic(&spec).map_err(|e| CliError::usage(format!("gen-data flags: {e}")))?;
    save_dataset(&ds, path)?;
    report(
        out,
        &[
            ("samples", ds.len().to_string()),
            ("n_steps", ds.n_steps().to_string()),
            ("n_features", ds.n_features().to_string()),
            ("written", path.display().to_string()),
        ],
    )
}

pub fn pack(s: &Settings, out: &mut dyn Write) -> Result<()> {
    let input = s.require_path(&s.data, "--data")?;
    let target = s.require_path(&s.out, "--out")?;
    distinct(&[("--data", input), ("--out", target)])?;
    if !is_csv(input) {
        return Err(CliError::usage(format!(
            "--data {}: pack expects a .csv file",
            input.display()
        )));
    }
    let ds = load_dataset(input)?;
    write_container(&ds, target).map_err(|e| CliError::core(target, e))?;
    report(
        out,
        &[
            ("samples", ds.len().to_string()),
            ("written", target.display().to_string()),
        ],
    )
}

pub fn corrupt(s: &Settings, out: &mut dyn Write) -> Result<()> {
    let input = s.require_path(&s.data, "--data")?;
    let target = s.require_path(&s.out, "--out")?;
    let twin = originals_path(target);
    distinct(&[("--data", input), ("--out", target), ("originals", &twin)])?;
    let rate = s.missing_rate.unwrap_or(0.2);
    let ds = load_dataset(input)?;
    let view = inject_mcar(&ds, rate, s.stage_seed(seed_offset::CORRUPT))
        .map_err(|e| CliError::usage(format!("--missing-rate {rate}: {e}")))?;
    save_dataset(&view.corrupted, target)?;
    save_dataset(&view.original, &twin)?;
    let hidden: usize = view.indicating.iter().flatten().filter(|&&b| b).count();
    report(
        out,
        &[
            ("hidden_cells", hidden.to_string()),
            ("written", target.display().to_string()),
            ("originals", twin.display().to_string()),
        ],
    )
}

/// Keeps the first `steps` steps of every sample.
fn truncate(ds: &PotsDataset, steps: usize) -> pots_core::Result<PotsDataset> {
    let d = ds.n_features();
    let samples = ds
        .samples()
        .iter()
        .map(|s| {
            TimeSeriesSample::from_parts(
                s.sample_id(),
                s.timestamps()[..steps].to_vec(),
                s.values()[..steps * d].to_vec(),
                s.mask()[..steps * d].to_vec(),
                d,
                s.label(),
            )
        })
        .collect::<pots_core::Result<Vec<_>>>()?;
    PotsDataset::new(samples, steps, d, ds.n_classes())
}

fn resolve_task(kind: ModelKind, task: Option<Task>) -> Result<Task> {
    let task = task.unwrap_or(kind.tasks()[0]);
    if kind.supports(task) {
        Ok(task)
    } else {
        Err(CliError::model(
            "--task",
            ModelError::UnsupportedTask { kind, task },
        ))
    }
}

fn train_and_val(
    s: &Settings,
    data: &PotsDataset,
    data_path: &Path,
) -> Result<(PotsDataset, PotsDataset)> {
    if let Some(val_path) = &s.val {
        return Ok((data.clone(), load_dataset(val_path)?));
    }
    // the core split wants three parts; the last two form the hold-out
    let half = HOLDOUT_FRACTION / 2.0;
    let (train, a, b) = split(
        data,
        (1.0 - HOLDOUT_FRACTION, half, half),
        s.stage_seed(seed_offset::HOLDOUT),
    )
    .map_err(|e| CliError::core(data_path, e))?;
    let mut held = a.into_samples();
    held.extend(b.into_samples());
    let val = data
        .with_samples(held)
        .map_err(|e| CliError::core(data_path, e))?;
    if train.is_empty() || val.is_empty() {
        return Err(CliError::data(
            data_path,
            format!(
                "{} samples are too few for a validation hold-out; pass --val",
                data.len()
            ),
        ));
    }
    Ok((train, val))
}

pub fn train(s: &Settings, out: &mut dyn Write) -> Result<()> {
    let kind = s
        .model
        .ok_or_else(|| CliError::usage("--model is required (flag or config key)"))?;
    let task = resolve_task(kind, s.task)?;
    let data_path = s.require_path(&s.data, "--data")?;
    let target = s.require_path(&s.out, "--out")?;
    distinct(&[("--data", data_path), ("--out", target)])?;
    if let Some(v) = &s.val {
        distinct(&[("--val", v), ("--out", target)])?;
    }
    let data = load_dataset(data_path)?;
    let ctx = data_path.display().to_string();
    let fail = |e: ModelError| CliError::model(&ctx, e);
    let mut params = Params::new(kind, s.params.clone());
    let init_seed = s.stage_seed(seed_offset::INIT);
    let mut lines: Vec<(&str, String)> =
        vec![("model", kind.tag().into()), ("task", task.name().into())];

    let model: Box<dyn PotsModel> = match kind {
        ModelKind::Locf => {
            params.finish()?;
            Box::new(LocfImputer::fit(&data).map_err(fail)?)
        }
        ModelKind::Mean => {
            params.finish()?;
            Box::new(MeanImputer::fit(&data).map_err(fail)?)
        }
        ModelKind::SaitsLite => {
            let d = SaitsConfig::default();
            let config = SaitsConfig {
                d_model: params.get("d_model", d.d_model)?,
                d_ff: params.get("d_ff", d.d_ff)?,
                lambda_mit: params.get("lambda_mit", d.lambda_mit)?,
                mit_rate: params.get("mit_rate", d.mit_rate)?,
                seed: init_seed,
            };
            params.finish()?;
            let train_config = s.train_config()?;
            let (train, val) = train_and_val(s, &data, data_path)?;
            let mut m = SaitsLite::new(config, data.n_steps(), data.n_features())
                .map_err(|e| CliError::usage(format!("--param: {e}")))?;
            let ck = parallel_fit(&mut m, &train, &val, &train_config).map_err(fail)?;
            push_checkpoint(&mut lines, &ck, train_config.selection_metric.name());
            Box::new(m)
        }
        ModelKind::GrudLite => {
            let hidden_size = params.get("hidden_size", GrudConfig::default().hidden_size)?;
            params.finish()?;
            let train_config = s.train_config()?;
            let n_classes = data
                .n_classes()
                .ok_or_else(|| CliError::data(data_path, "classification needs labelled samples"))?
                .max(2);
            let (train, val) = train_and_val(s, &data, data_path)?;
            let mut m = GrudLite::new(
                GrudConfig {
                    hidden_size,
                    seed: init_seed,
                },
                data.n_features(),
                n_classes,
            )
            .map_err(|e| CliError::usage(format!("--param: {e}")))?;
            let ck = parallel_fit(&mut m, &train, &val, &train_config).map_err(fail)?;
            push_checkpoint(&mut lines, &ck, train_config.selection_metric.name());
            Box::new(m)
        }
        ModelKind::TwoStageKMeans => {
            let d = KMeansConfig::default();
            let k = match params.take("k") {
                Some(raw) => raw.parse().map_err(|_| {
                    CliError::usage(format!("--param k={raw}: invalid value for {kind}"))
                })?,
                None => data.n_classes().ok_or_else(|| {
                    CliError::usage("--param k is required when the data carries no labels")
                })?,
            };
            let config = KMeansConfig {
                k,
                max_iters: params.get("max_iters", d.max_iters)?,
                tol: params.get("tol", d.tol)?,
                seed: init_seed,
            };
            let inner: Box<dyn PotsModel> = match params.take("inner").as_deref() {
                None | Some("locf") => Box::new(LocfImputer::fit(&data).map_err(fail)?),
                Some("mean") => Box::new(MeanImputer::fit(&data).map_err(fail)?),
                Some(other) => {
                    return Err(CliError::usage(format!(
                        "--param inner={other}: expected locf or mean"
                    )))
                }
            };
            params.finish()?;
            let (m, fit) = TwoStageKMeans::fit(inner, &data, config).map_err(fail)?;
            lines.push(("iterations", fit.iterations.to_string()));
            lines.push(("inertia", fit.inertia.to_string()));
            Box::new(m)
        }
        ModelKind::Tmf => {
            let d = TmfConfig::default();
            let config = TmfConfig {
                rank: params.get("rank", d.rank)?,
                ar_order: params.get("ar_order", d.ar_order)?,
                lambda_w: params.get("lambda_w", d.lambda_w)?,
                lambda_f: params.get("lambda_f", d.lambda_f)?,
                lambda_a: params.get("lambda_a", d.lambda_a)?,
                max_iters: params.get("max_iters", d.max_iters)?,
                tol: params.get("tol", d.tol)?,
                seed: init_seed,
            };
            params.finish()?;
            let h = s.horizon();
            if h == 0 || h >= data.n_steps() {
                return Err(CliError::usage(format!(
                    "--horizon {h}: must be between 1 and {} for {}-step series",
                    data.n_steps().saturating_sub(1),
                    data.n_steps()
                )));
            }
            let observed =
                truncate(&data, data.n_steps() - h).map_err(|e| CliError::core(data_path, e))?;
            let (m, histories) = TmfModel::fit(&observed, config).map_err(fail)?;
            let sweeps = histories.iter().map(Vec::len).max().unwrap_or(0);
            lines.push(("training_steps", observed.n_steps().to_string()));
            lines.push(("sweeps", sweeps.to_string()));
            Box::new(m)
        }
    };
    save_model(model.as_ref(), target)
        .map_err(|e| CliError::model(&target.display().to_string(), e))?;
    lines.push(("written", target.display().to_string()));
    report(out, &lines)
}

fn push_checkpoint(
    lines: &mut Vec<(&str, String)>,
    ck: &pots_models::Checkpoint,
    metric: &'static str,
) {
    lines.push(("epochs_run", ck.metric_log.len().to_string()));
    lines.push(("best_epoch", ck.epoch.to_string()));
    lines.push((metric, ck.metric.to_string()));
}

struct Loaded {
    artifact: ModelArtifact,
    model: Box<dyn PotsModel>,
    task: Task,
}

fn load_for_task(s: &Settings) -> Result<Loaded> {
    let path = s.require_path(&s.artifact, "--artifact")?;
    let ctx = path.display().to_string();
    let artifact = load_artifact(path).map_err(|e| CliError::model(&ctx, e))?;
    let model = model_from_artifact(&artifact).map_err(|e| CliError::model(&ctx, e))?;
    let task = resolve_task(model.kind(), s.task)?;
    Ok(Loaded {
        artifact,
        model,
        task,
    })
}

fn labels_of(ds: &PotsDataset, path: &Path) -> Result<Vec<usize>> {
    ds.samples()
        .iter()
        .map(|s| {
            s.label().ok_or_else(|| {
                CliError::data(path, format!("sample {} has no label", s.sample_id()))
            })
        })
        .collect()
}

fn forecast_split(
    loaded: &Loaded,
    s: &Settings,
    data: &PotsDataset,
    path: &Path,
) -> Result<(usize, usize)> {
    let h = s.horizon();
    let t_train = loaded.artifact.usize("t_train").map_err(|e| {
        CliError::model(
            &s.artifact.as_ref().expect("checked").display().to_string(),
            e,
        )
    })?;
    if h == 0 {
        return Err(CliError::usage("--horizon 0: must be at least 1"));
    }
    if data.n_steps() < t_train {
        return Err(CliError::data(
            path,
            format!(
                "series have {} steps, the model was fitted on {t_train}",
                data.n_steps()
            ),
        ));
    }
    Ok((t_train, h))
}

pub fn evaluate(s: &Settings, out: &mut dyn Write) -> Result<()> {
    let loaded = load_for_task(s)?;
    let data_path = s.require_path(&s.data, "--data")?;
    let ctx = data_path.display().to_string();
    let fail = |e: ModelError| CliError::model(&ctx, e);
    let bad = |e: pots_core::PotsError| CliError::core(data_path, e);
    let model = loaded.model.as_ref();
    match loaded.task {
        Task::Impute => {
            let twin = s
                .originals
                .clone()
                .unwrap_or_else(|| originals_path(data_path));
            let view = CorruptedView::from_pair(load_dataset(data_path)?, load_dataset(&twin)?)
                .map_err(|e| CliError::data(&twin, e))?;
            let pred: Vec<f64> = model
                .impute(&view.corrupted)
                .map_err(fail)?
                .into_iter()
                .flatten()
                .collect();
            let target: Vec<f64> = view
                .original
                .samples()
                .iter()
                .flat_map(|x| x.values().to_vec())
                .collect();
            let mask: Vec<bool> = view.indicating.iter().flatten().copied().collect();
            let cells = mask.iter().filter(|&&b| b).count();
            if cells == 0 {
                return Err(CliError::data(
                    &twin,
                    "no artificially hidden cells to score",
                ));
            }
            let mre = masked_mre(&pred, &target, &mask)
                .map(|v| v.to_string())
                .unwrap_or_else(|_| "nan".into());
            report(
                out,
                &[
                    (
                        "mae",
                        masked_mae(&pred, &target, &mask).map_err(bad)?.to_string(),
                    ),
                    (
                        "mse",
                        masked_mse(&pred, &target, &mask).map_err(bad)?.to_string(),
                    ),
                    (
                        "rmse",
                        masked_rmse(&pred, &target, &mask).map_err(bad)?.to_string(),
                    ),
                    ("mre", mre),
                    ("n_cells", cells.to_string()),
                ],
            )
        }
        Task::Classify => {
            let data = load_dataset(data_path)?;
            let labels = labels_of(&data, data_path)?;
            let probs = model.classify(&data).map_err(fail)?;
            if probs.first().map(Vec::len) == Some(2) {
                let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
                let r = binary_classification_metrics(&scores, &labels, 0.5).map_err(bad)?;
                report(out, &r.entries())
            } else {
                let pred: Vec<usize> = probs.iter().map(|p| pots_models::grud::argmax(p)).collect();
                report(
                    out,
                    &[
                        (
                            "accuracy",
                            accuracy(&pred, &labels).map_err(bad)?.to_string(),
                        ),
                        ("n_samples", labels.len().to_string()),
                    ],
                )
            }
        }
        Task::Cluster => {
            let data = load_dataset(data_path)?;
            let labels = labels_of(&data, data_path)?;
            let pred = model.cluster(&data).map_err(fail)?;
            report(
                out,
                &[
                    (
                        "rand_index",
                        rand_index(&pred, &labels).map_err(bad)?.to_string(),
                    ),
                    ("purity", purity(&pred, &labels).map_err(bad)?.to_string()),
                    ("n_samples", labels.len().to_string()),
                ],
            )
        }
        Task::Forecast => {
            let data = load_dataset(data_path)?;
            let (t_train, h) = forecast_split(&loaded, s, &data, data_path)?;
            if data.n_steps() < t_train + h {
                return Err(CliError::data(
                    data_path,
                    format!(
                        "scoring needs {} steps ({t_train} fitted + horizon {h}), series have {}",
                        t_train + h,
                        data.n_steps()
                    ),
                ));
            }
            let d = data.n_features();
            let pred: Vec<f64> = model
                .forecast(&data, h)
                .map_err(fail)?
                .into_iter()
                .flatten()
                .collect();
            let (mut target, mut mask) = (Vec::new(), Vec::new());
            for x in data.samples() {
                let tail = t_train * d..(t_train + h) * d;
                target.extend(x.values()[tail.clone()].iter().map(|v| {
                    if v.is_nan() {
                        0.0
                    } else {
                        *v
                    }
                }));
                mask.extend_from_slice(&x.mask()[tail]);
            }
            let cells = mask.iter().filter(|&&b| b).count();
            if cells == 0 {
                return Err(CliError::data(
                    data_path,
                    "no observed cells in the forecast window",
                ));
            }
            report(
                out,
                &[
                    (
                        "mae",
                        masked_mae(&pred, &target, &mask).map_err(bad)?.to_string(),
                    ),
                    (
                        "rmse",
                        masked_rmse(&pred, &target, &mask).map_err(bad)?.to_string(),
                    ),
                    ("n_cells", cells.to_string()),
                ],
            )
        }
    }
}

pub fn predict(s: &Settings, out: &mut dyn Write) -> Result<()> {
    let loaded = load_for_task(s)?;
    let data_path = s.require_path(&s.data, "--data")?;
    if let Some(target) = &s.out {
        distinct(&[("--data", data_path), ("--out", target)])?;
    }
    let data = load_dataset(data_path)?;
    let ctx = data_path.display().to_string();
    let fail = |e: ModelError| CliError::model(&ctx, e);
    let model = loaded.model.as_ref();
    let d = data.n_features();
    let features = (0..d).map(|i| format!("f{i}"));
    let mut rows: Vec<Vec<String>> = Vec::new();
    let header: Vec<String> = match loaded.task {
        Task::Impute => {
            for (x, values) in data
                .samples()
                .iter()
                .zip(model.impute(&data).map_err(fail)?)
            {
                for (t, ts) in x.timestamps().iter().enumerate() {
                    let mut row = vec![x.sample_id().to_string(), ts.to_string()];
                    row.extend(values[t * d..(t + 1) * d].iter().map(f64::to_string));
                    rows.push(row);
                }
            }
            ["sample_id", "step"]
                .map(String::from)
                .into_iter()
                .chain(features)
                .collect()
        }
        Task::Classify => {
            let probs = model.classify(&data).map_err(fail)?;
            let width = probs.first().map_or(0, Vec::len);
            for (x, p) in data.samples().iter().zip(probs) {
                rows.push(
                    std::iter::once(x.sample_id().to_string())
                        .chain(p.iter().map(f64::to_string))
                        .collect(),
                );
            }
            std::iter::once("sample_id".to_string())
                .chain((0..width).map(|c| format!("p{c}")))
                .collect()
        }
        Task::Cluster => {
            for (x, c) in data
                .samples()
                .iter()
                .zip(model.cluster(&data).map_err(fail)?)
            {
                rows.push(vec![x.sample_id().to_string(), c.to_string()]);
            }
            vec!["sample_id".into(), "cluster".into()]
        }
        Task::Forecast => {
            let (t_train, h) = forecast_split(&loaded, s, &data, data_path)?;
            for (x, grid) in data
                .samples()
                .iter()
                .zip(model.forecast(&data, h).map_err(fail)?)
            {
                for k in 0..h {
                    let mut row = vec![x.sample_id().to_string(), (t_train + k).to_string()];
                    row.extend(grid[k * d..(k + 1) * d].iter().map(f64::to_string));
                    rows.push(row);
                }
            }
            ["sample_id", "step"]
                .map(String::from)
                .into_iter()
                .chain(features)
                .collect()
        }
    };
    match &s.out {
        Some(path) => {
            let file = File::create(path).map_err(io_err(path))?;
            write_csv(csv::Writer::from_writer(file), &header, &rows)
                .map_err(|e| CliError::data(path, e))?;
            report(
                out,
                &[
                    ("rows", rows.len().to_string()),
                    ("written", path.display().to_string()),
                ],
            )
        }
        None => write_csv(csv::Writer::from_writer(out), &header, &rows)
            .map_err(|e| CliError::Data(format!("stdout: {e}"))),
    }
}

fn write_csv<W: Write>(
    mut w: csv::Writer<W>,
    header: &[String],
    rows: &[Vec<String>],
) -> csv::Result<()> {
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn render(v: &HyperValue) -> String {
    match v {
        HyperValue::Float(x) => x.to_string(),
        HyperValue::Int(x) => x.to_string(),
        HyperValue::Str(x) => x.clone(),
    }
}

pub fn inspect(path: &Path, out: &mut dyn Write) -> Result<()> {
    let mut magic = [0u8; 4];
    let n = File::open(path)
        .and_then(|mut f| f.read(&mut magic))
        .map_err(io_err(path))?;
    if n == 4 && &magic == ARTIFACT_MAGIC {
        let a = load_artifact(path).map_err(|e| CliError::model(&path.display().to_string(), e))?;
        write_line(out, "type=model")?;
        write_line(out, format_args!("kind={}", a.kind))?;
        for (k, v) in &a.hyper {
            write_line(out, format_args!("hyper.{k}={}", render(v)))?;
        }
        for (name, t) in &a.tensors {
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            write_line(out, format_args!("tensor.{name}=[{}]", shape.join(",")))?;
        }
        return write_line(out, format_args!("norm={}", a.norm.is_some()));
    }
    if n < 4 || &magic != POTS_MAGIC {
        // let the container reader produce its canonical message
        open_readonly(path).map_err(|e| CliError::core(path, e))?;
    }
    let handle = open_readonly(path).map_err(|e| CliError::core(path, e))?;
    let h = handle.header();
    report(
        out,
        &[
            ("type", "container".into()),
            ("format_version", h.format_version.to_string()),
            ("n_samples", h.n_samples.to_string()),
            ("n_steps", h.n_steps.to_string()),
            ("n_features", h.n_features.to_string()),
            ("labels", h.labels_present().to_string()),
            ("record_bytes", h.record_len().to_string()),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn originals_twin_keeps_the_extension() {
        assert_eq!(
            originals_path(Path::new("run/x.pots")),
            Path::new("run/x.originals.pots")
        );
        assert_eq!(
            originals_path(Path::new("x.csv")),
            Path::new("x.originals.csv")
        );
        assert_eq!(originals_path(Path::new("x")), Path::new("x.originals"));
    }

    #[test]
    fn identical_paths_name_both_flags() {
        let err = distinct(&[("--data", Path::new("a")), ("--out", Path::new("a"))]).unwrap_err();
        assert!(matches!(&err, CliError::Usage(m) if m.contains("--data") && m.contains("--out")));
    }

    #[test]
    fn truncation_keeps_leading_steps() {
        let ds = pots_core::generate_synthetic(&SyntheticSpec {
            n_samples: 3,
            n_steps: 6,
            n_features: 2,
            n_classes: 2,
            missing_rate: 0.3,
            seed: 1,
        })
        .unwrap();
        let short = truncate(&ds, 4).unwrap();
        assert_eq!(short.n_steps(), 4);
        for (a, b) in ds.samples().iter().zip(short.samples()) {
            assert_eq!(&a.mask()[..8], b.mask());
            assert_eq!(a.label(), b.label());
        }
    }
}
