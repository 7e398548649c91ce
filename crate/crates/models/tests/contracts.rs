mod support;

use pots_core::{PotsDataset, TimeSeriesSample};
use pots_models::*;
use support::{bits, synthetic};

fn imputers(train: &PotsDataset) -> Vec<Box<dyn PotsModel>> {
    let mut saits = SaitsLite::new(
        SaitsConfig {
            d_model: 6,
            d_ff: 8,
            seed: 2,
            ..SaitsConfig::default()
        },
        train.n_steps(),
        train.n_features(),
    )
    .unwrap();
    saits.prepare_training(train).unwrap();
    vec![
        Box::new(LocfImputer::fit(train).unwrap()),
        Box::new(MeanImputer::fit(train).unwrap()),
        Box::new(saits),
    ]
}

#[test]
fn every_imputer_preserves_observed_cells() {
    let data = synthetic(12, 7, 3, 2, 0.35, 1);
    for m in imputers(&data) {
        let out = m.impute(&data).unwrap();
        for (s, row) in data.samples().iter().zip(&out) {
            for ((v, &mk), p) in s.values().iter().zip(s.mask()).zip(row) {
                assert!(p.is_finite(), "{}", m.kind());
                if mk {
                    assert_eq!(v.to_bits(), p.to_bits(), "{}", m.kind());
                }
            }
        }
    }
}

#[test]
fn fully_observed_input_is_returned_unchanged() {
    let data = synthetic(5, 4, 2, 2, 0.0, 2);
    for m in imputers(&data) {
        let out = m.impute(&data).unwrap();
        let expect: Vec<Vec<f64>> = data.samples().iter().map(|s| s.values().to_vec()).collect();
        assert_eq!(bits(&out), bits(&expect), "{}", m.kind());
    }
}

#[test]
fn locf_is_idempotent_on_datasets() {
    let data = synthetic(6, 8, 2, 2, 0.4, 3);
    let m = LocfImputer::fit(&data).unwrap();
    let once = m.impute(&data).unwrap();
    let completed: Vec<TimeSeriesSample> = data
        .samples()
        .iter()
        .zip(&once)
        .map(|(s, v)| {
            TimeSeriesSample::new(
                s.sample_id(),
                s.timestamps().to_vec(),
                v.clone(),
                2,
                s.label(),
            )
            .unwrap()
        })
        .collect();
    let again = m.impute(&data.with_samples(completed).unwrap()).unwrap();
    assert_eq!(bits(&once), bits(&again));
}

#[test]
fn unimplemented_contracts_name_kind_and_task() {
    let data = synthetic(4, 3, 2, 2, 0.0, 4);
    let locf = LocfImputer::fit(&data).unwrap();
    let err = locf.forecast(&data, 2).unwrap_err();
    assert!(matches!(
        err,
        ModelError::UnsupportedTask {
            kind: ModelKind::Locf,
            task: Task::Forecast
        }
    ));
    assert!(err.to_string().contains("locf") && err.to_string().contains("forecast"));
    assert!(locf.classify(&data).is_err() && locf.cluster(&data).is_err());
    let grud = GrudLite::new(
        GrudConfig {
            hidden_size: 2,
            seed: 0,
        },
        2,
        2,
    )
    .unwrap();
    assert!(matches!(
        grud.impute(&data),
        Err(ModelError::UnsupportedTask {
            task: Task::Impute,
            ..
        })
    ));
}

#[test]
fn feature_count_mismatch_is_rejected() {
    let data = synthetic(4, 3, 2, 2, 0.0, 4);
    let m = MeanImputer::new(vec![0.0; 3]).unwrap();
    assert!(matches!(m.impute(&data), Err(ModelError::InvalidInput(_))));
}

#[test]
fn classification_ignores_missing_cell_payloads() {
    let data = synthetic(6, 5, 2, 2, 0.3, 5);
    let m = GrudLite::new(
        GrudConfig {
            hidden_size: 4,
            seed: 3,
        },
        2,
        2,
    )
    .unwrap();
    let scrambled: Vec<TimeSeriesSample> = data
        .samples()
        .iter()
        .map(|s| {
            let values: Vec<f64> = s
                .values()
                .iter()
                .zip(s.mask())
                .map(|(&v, &m)| if m { v } else { 1e6 })
                .collect();
            TimeSeriesSample::from_parts(
                s.sample_id(),
                s.timestamps().to_vec(),
                values,
                s.mask().to_vec(),
                2,
                s.label(),
            )
            .unwrap()
        })
        .collect();
    let a = m.classify(&data).unwrap();
    let b = m.classify(&data.with_samples(scrambled).unwrap()).unwrap();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn probability_rows_sum_to_one() {
    let data = synthetic(10, 6, 3, 3, 0.2, 6);
    let m = GrudLite::new(
        GrudConfig {
            hidden_size: 7,
            seed: 9,
        },
        3,
        3,
    )
    .unwrap();
    let probs = m.classify(&data).unwrap();
    assert_eq!(probs.len(), data.len());
    for row in probs {
        assert_eq!(row.len(), 3);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn kinds_report_their_tasks() {
    for k in ModelKind::ALL {
        assert_eq!(k.tag().parse::<ModelKind>().unwrap(), k);
        assert_eq!(k.tasks().len(), 1);
    }
    assert!("brits".parse::<ModelKind>().is_err());
}
