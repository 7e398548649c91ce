use std::fs;
use std::io::Write;

use pots_core::store::HEADER_LEN;
use pots_core::{
    generate_synthetic, lazy_dataset, materialize, open_readonly, write_container, DatasetAccess,
    PotsDataset, PotsError, SyntheticSpec,
};
use proptest::prelude::*;

fn dataset(n: usize, missing_rate: f64) -> PotsDataset {
    generate_synthetic(&SyntheticSpec {
        n_samples: n,
        n_steps: 6,
        n_features: 3,
        n_classes: 2,
        missing_rate,
        seed: 99,
    })
    .unwrap()
}

fn write_tmp(ds: &PotsDataset) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.pots");
    write_container(ds, &path).unwrap();
    (dir, path)
}

#[test]
fn header_matches_dataset() {
    let ds = dataset(5, 0.2);
    let (_d, path) = write_tmp(&ds);
    let h = open_readonly(&path).unwrap();
    assert_eq!(h.header().n_samples, 5);
    assert_eq!(h.header().n_steps, 6);
    assert_eq!(h.header().n_features, 3);
    assert!(h.header().labels_present());
    assert_eq!(
        h.payload_bytes_read(),
        0,
        "opening must not read sample payloads"
    );
}

#[test]
fn writing_twice_is_byte_identical() {
    let ds = dataset(8, 0.3);
    let (_a, p1) = write_tmp(&ds);
    let (_b, p2) = write_tmp(&ds);
    assert_eq!(fs::read(p1).unwrap(), fs::read(p2).unwrap());
}

#[test]
fn unwritable_path_is_a_storage_error() {
    let ds = dataset(1, 0.0);
    let err = write_container(&ds, "/nonexistent-dir/sub/x.pots").unwrap_err();
    assert!(matches!(err, PotsError::Storage { .. }), "{err}");
}

#[test]
fn corrupted_magic_is_rejected() {
    let (_d, path) = write_tmp(&dataset(3, 0.0));
    let mut bytes = fs::read(&path).unwrap();
    bytes[0..4].copy_from_slice(b"XXXX");
    fs::write(&path, bytes).unwrap();
    let err = open_readonly(&path).unwrap_err();
    assert!(err.to_string().contains("not a POTS container"), "{err}");
}

#[test]
fn unsupported_version_is_named() {
    let (_d, path) = write_tmp(&dataset(3, 0.0));
    let mut bytes = fs::read(&path).unwrap();
    bytes[4..6].copy_from_slice(&7u16.to_le_bytes());
    fs::write(&path, bytes).unwrap();
    let err = open_readonly(&path).unwrap_err();
    assert!(
        matches!(&err, PotsError::Format(m) if m.contains("version 7")),
        "{err}"
    );
}

#[test]
fn truncated_file_is_rejected() {
    let (_d, path) = write_tmp(&dataset(4, 0.0));
    let h = open_readonly(&path).unwrap();
    let cut = h.header().index_offset as usize - 10;
    drop(h);
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..cut]).unwrap();
    assert!(matches!(open_readonly(&path), Err(PotsError::Format(_))));
    fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(open_readonly(&path), Err(PotsError::Format(_))));
}

#[test]
fn non_container_file_is_rejected() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(b"sample_id,step,f0\n").unwrap();
    let err = open_readonly(f.path()).unwrap_err();
    assert!(err.to_string().contains("not a POTS container"));
}

#[test]
fn batch_order_follows_indices() {
    let ds = dataset(4, 0.1);
    let (_d, path) = write_tmp(&ds);
    let h = open_readonly(&path).unwrap();
    let got = h.fetch_batch(&[2, 0, 2]).unwrap();
    let ids: Vec<u64> = got.iter().map(|s| s.sample_id()).collect();
    assert_eq!(ids, vec![2, 0, 2]);
    assert!(matches!(
        h.fetch_batch(&[4]),
        Err(PotsError::InvalidInput(_))
    ));
}

#[test]
fn flipped_payload_byte_is_reported_for_that_record() {
    let ds = dataset(6, 0.1);
    let (_d, path) = write_tmp(&ds);
    let rlen = open_readonly(&path).unwrap().header().record_len() as usize;
    let mut bytes = fs::read(&path).unwrap();
    bytes[HEADER_LEN + 3 * rlen + 20] ^= 0x40;
    fs::write(&path, bytes).unwrap();
    let h = open_readonly(&path).unwrap();
    assert!(h.fetch_batch(&[0, 1, 2, 4, 5]).is_ok());
    let err = h.fetch_batch(&[3]).unwrap_err();
    assert!(
        matches!(&err, PotsError::Corruption(m) if m.contains("record 3")),
        "{err}"
    );
}

#[test]
fn full_fetch_equals_in_memory() {
    let ds = dataset(30, 0.25);
    let (_d, path) = write_tmp(&ds);
    let lazy = lazy_dataset(open_readonly(&path).unwrap());
    assert_eq!(lazy.len(), 30);
    assert_eq!((lazy.n_steps(), lazy.n_features()), (6, 3));
    let back = materialize(&lazy).unwrap();
    assert!(back.same_as(&ds));
}

#[test]
fn bytes_read_scale_with_batch_not_container() {
    let small = dataset(100, 0.1);
    let large = dataset(10_000, 0.1);
    let (_a, ps) = write_tmp(&small);
    let (_b, pl) = write_tmp(&large);
    let hs = open_readonly(&ps).unwrap();
    let hl = open_readonly(&pl).unwrap();
    let batch = [5u64, 17, 42, 99];
    hs.fetch_batch(&batch).unwrap();
    hl.fetch_batch(&batch).unwrap();
    assert_eq!(hs.payload_bytes_read(), hl.payload_bytes_read());
    assert_eq!(hs.payload_bytes_read(), 4 * hs.header().record_len());
}

#[test]
fn concurrent_fetches_share_one_handle() {
    let ds = dataset(40, 0.2);
    let (_d, path) = write_tmp(&ds);
    let h = open_readonly(&path).unwrap();
    std::thread::scope(|scope| {
        for w in 0..4u64 {
            let h = &h;
            let ds = &ds;
            scope.spawn(move || {
                let idx: Vec<u64> = (0..10).map(|i| i * 4 + w).collect();
                let got = h.fetch_batch(&idx).unwrap();
                for (s, i) in got.iter().zip(&idx) {
                    assert!(s.same_as(&ds.samples()[*i as usize]));
                }
            });
        }
    });
    assert_eq!(h.payload_bytes_read(), 40 * h.header().record_len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn container_round_trip_is_bitwise(
        n in 1usize..12,
        t in 1usize..7,
        d in 1usize..5,
        rate in 0.0f64..0.9,
        seed in any::<u64>(),
    ) {
        let ds = generate_synthetic(&SyntheticSpec {
            n_samples: n, n_steps: t, n_features: d, n_classes: 3, missing_rate: rate, seed,
        }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.pots");
        write_container(&ds, &path).unwrap();
        let h = open_readonly(&path).unwrap();
        let idx: Vec<u64> = (0..n as u64).collect();
        let back = h.fetch_batch(&idx).unwrap();
        for (a, b) in back.iter().zip(ds.samples()) {
            prop_assert!(a.same_as(b));
        }
    }
}
