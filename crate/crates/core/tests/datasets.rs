mod common;

use std::collections::HashSet;
use std::fs;

use common::fixtures::{label_sequence, write_har, write_mitbih, write_ucr};
use proptest::prelude::*;
use susl_core::datasets::synthetic::{waveforms, WaveformSpec};
use susl_core::datasets::{
    build_regime, class_counts, ingest_har_dir, ingest_mitbih_csv, ingest_ucr_tsv, make_batches, read_bundle,
    write_bundle, znormalize, DataError, DatasetBundle, RegimeSpec, SeriesSample,
};

fn regime(fraction: f64, hidden: &[usize], seed: u64) -> RegimeSpec {
    RegimeSpec { labeled_fraction: fraction, hidden_classes: hidden.to_vec(), n_augmented: 0, seed }
}

fn labeled_bundle(counts: &[usize], channels: usize, length: usize) -> DatasetBundle {
    let train = label_sequence(counts)
        .into_iter()
        .enumerate()
        .map(|(i, c)| SeriesSample {
            id: i as u64,
            label: Some(c),
            values: (0..channels * length).map(|t| ((i * 13 + t * 5) % 17) as f64 * 0.25 - 2.0).collect(),
        })
        .collect();
    DatasetBundle {
        name: "fixture".into(),
        channels,
        length,
        class_names: (0..counts.len()).map(|c| format!("c{c}")).collect(),
        train,
        test: vec![],
    }
}

#[test]
fn ucr_labels_are_remapped_in_numeric_order() {
    let dir = tempfile::tempdir().unwrap();
    write_ucr(dir.path(), "Toy", &[3, 2, 4], &[1, 1, 1], 96);
    let b = ingest_ucr_tsv(dir.path()).unwrap();
    assert_eq!(b.name, "Toy");
    assert_eq!((b.channels, b.length), (1, 96));
    assert_eq!(b.class_names, ["1", "2", "3"]);
    assert_eq!(b.train_counts(), [3, 2, 4]);
    assert_eq!(b.test_counts(), [1, 1, 1]);
}

#[test]
fn ucr_ragged_row_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_ucr(dir.path(), "Toy", &[2, 2], &[1, 1], 96);
    let path = dir.path().join("Toy_TRAIN.tsv");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str(&format!("1{}\n", "\t0.5".repeat(95)));
    fs::write(&path, text).unwrap();
    match ingest_ucr_tsv(dir.path()) {
        Err(DataError::Ragged { expected: 96, got: 95, line: 5, .. }) => {}
        other => panic!("expected a ragged-row error, got {other:?}"),
    }
}

#[test]
fn ucr_test_label_missing_from_train_is_unknown() {
    let dir = tempfile::tempdir().unwrap();
    write_ucr(dir.path(), "Toy", &[2, 2], &[1, 1, 1], 8);
    assert!(matches!(ingest_ucr_tsv(dir.path()), Err(DataError::UnknownLabel { .. })));
}

#[test]
fn ucr_non_integer_label_is_unknown() {
    let dir = tempfile::tempdir().unwrap();
    write_ucr(dir.path(), "Toy", &[2], &[1], 4);
    fs::write(dir.path().join("Toy_TRAIN.tsv"), "1.5\t1\t2\t3\t4\n").unwrap();
    assert!(matches!(ingest_ucr_tsv(dir.path()), Err(DataError::UnknownLabel { .. })));
}

#[test]
fn mitbih_zero_pad_column_is_dropped() {
    let dir = tempfile::tempdir().unwrap();
    write_mitbih(dir.path(), &[3, 1, 1, 1, 2], &[2, 1, 0, 0, 1], 188);
    let b = ingest_mitbih_csv(&dir.path().join("mitbih_train.csv"), &dir.path().join("mitbih_test.csv")).unwrap();
    assert_eq!(b.length, 186);
    assert_eq!(b.class_names, ["N", "S", "V", "F", "Q"]);
    assert_eq!(b.train_counts(), [3, 1, 1, 1, 2]);
    assert_eq!(b.test_counts(), [2, 1, 0, 0, 1]);
    assert!(b.train.iter().all(|s| s.values.len() == 186));
}

#[test]
fn mitbih_keeps_a_nonzero_last_column() {
    let dir = tempfile::tempdir().unwrap();
    write_mitbih(dir.path(), &[1, 1, 1, 1, 1], &[1, 0, 0, 0, 0], 188);
    let path = dir.path().join("mitbih_test.csv");
    let text = fs::read_to_string(&path).unwrap().replace(",0.0,0.0", ",0.5,0.0");
    fs::write(&path, text).unwrap();
    let b = ingest_mitbih_csv(&dir.path().join("mitbih_train.csv"), &path).unwrap();
    assert_eq!(b.length, 187);
}

#[test]
fn mitbih_header_is_skipped_but_numeric_first_row_is_data() {
    let dir = tempfile::tempdir().unwrap();
    write_mitbih(dir.path(), &[2, 0, 0, 0, 1], &[1, 0, 0, 0, 0], 187);
    let train = dir.path().join("mitbih_train.csv");
    let test = dir.path().join("mitbih_test.csv");
    let header: Vec<String> = (0..187).map(|i| format!("c{i}")).collect();
    let body = fs::read_to_string(&train).unwrap();
    fs::write(&train, format!("{}\n{body}", header.join(","))).unwrap();
    let b = ingest_mitbih_csv(&train, &test).unwrap();
    assert_eq!(b.train.len(), 3);
    assert_eq!(b.length, 186);
}

#[test]
fn mitbih_rejects_bad_labels_and_widths() {
    let dir = tempfile::tempdir().unwrap();
    write_mitbih(dir.path(), &[1, 0, 0, 0, 0], &[1, 0, 0, 0, 0], 188);
    let train = dir.path().join("mitbih_train.csv");
    let test = dir.path().join("mitbih_test.csv");
    let good = fs::read_to_string(&train).unwrap();

    fs::write(&train, good.replace(",0.0,0.0\n", ",0.0,5.0\n")).unwrap();
    assert!(matches!(ingest_mitbih_csv(&train, &test), Err(DataError::UnknownLabel { .. })));

    fs::write(&train, format!("{good}1.0,0.0\n")).unwrap();
    assert!(matches!(ingest_mitbih_csv(&train, &test), Err(DataError::Ragged { .. })));

    let short = dir.path().join("short.csv");
    write_mitbih(dir.path(), &[1, 0, 0, 0, 0], &[0, 0, 0, 0, 0], 100);
    fs::rename(&train, &short).unwrap();
    assert!(matches!(ingest_mitbih_csv(&short, &test), Err(DataError::InvalidBundle(_))));
}

#[test]
fn har_directory_ingests_nine_channels() {
    let dir = tempfile::tempdir().unwrap();
    write_har(dir.path(), &[2, 1, 1, 1, 1, 3], &[1, 1, 0, 0, 0, 1]);
    let b = ingest_har_dir(dir.path()).unwrap();
    assert_eq!((b.channels, b.length), (9, 128));
    assert_eq!(b.train_counts(), [2, 1, 1, 1, 1, 3]);
    assert_eq!(b.test_counts(), [1, 1, 0, 0, 0, 1]);
    assert_eq!(b.class_names[5], "Laying");
    // Channel-major layout: the second channel starts at offset 128.
    let raw = fs::read_to_string(dir.path().join("train/Inertial Signals/body_acc_y_train.txt")).unwrap();
    let first: f64 = raw.split_whitespace().next().unwrap().parse().unwrap();
    assert_eq!(b.train[0].values[128], first);
}

#[test]
fn har_missing_channel_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    write_har(dir.path(), &[1; 6], &[1; 6]);
    let gone = dir.path().join("test/Inertial Signals/total_acc_z_test.txt");
    fs::remove_file(&gone).unwrap();
    assert_eq!(ingest_har_dir(dir.path()).unwrap_err(), DataError::MissingFile(gone));
}

#[test]
fn har_row_count_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_har(dir.path(), &[1; 6], &[1; 6]);
    fs::write(dir.path().join("train/y_train.txt"), "1\n2\n3\n").unwrap();
    assert!(matches!(ingest_har_dir(dir.path()), Err(DataError::RowCountMismatch { left: 6, right: 3, .. })));
}

#[test]
fn ingesting_twice_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_ucr(dir.path(), "Toy", &[5, 4], &[2, 3], 16);
    assert_eq!(ingest_ucr_tsv(dir.path()).unwrap(), ingest_ucr_tsv(dir.path()).unwrap());
}

#[test]
fn bundle_round_trip_is_bit_exact() {
    let mut b = labeled_bundle(&[4, 3], 2, 5);
    let awkward = [0.1, 1.0 / 3.0, -2.5e-300, 1.7976931348623157e308, f64::MIN_POSITIVE, -0.0, 123_456_789.123_456_79];
    for (s, v) in b.train.iter_mut().zip(awkward.iter().cycle()) {
        s.values[3] = *v;
    }
    b.test = vec![SeriesSample { id: 100, label: None, values: vec![0.5; 10] }];
    let dir = tempfile::tempdir().unwrap();
    write_bundle(&b, dir.path()).unwrap();
    let back = read_bundle(dir.path()).unwrap();
    assert_eq!(back.class_names, b.class_names);
    for (x, y) in back.train.iter().zip(&b.train) {
        assert_eq!(x.label, y.label);
        let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x.values), bits(&y.values));
    }
    assert_eq!(back.test[0].label, None);
    let first = fs::read(dir.path().join("bundle.csv")).unwrap();
    write_bundle(&back, dir.path()).unwrap();
    assert_eq!(fs::read(dir.path().join("bundle.csv")).unwrap(), first);
}

#[test]
fn bundle_rejects_commas_in_class_names() {
    let mut b = labeled_bundle(&[1], 1, 2);
    b.class_names[0] = "a,b".into();
    assert!(write_bundle(&b, tempfile::tempdir().unwrap().path()).is_err());
}

fn channel_stats(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (mean, (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn znormalize_standardizes_and_is_idempotent(
        rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 12), 1..6),
        offset in -1e4f64..1e4,
    ) {
        let train = rows.iter().enumerate().map(|(i, r)| SeriesSample {
            id: i as u64,
            label: Some(0),
            values: r.iter().map(|v| v + offset).collect(),
        }).collect();
        let b = DatasetBundle { name: "p".into(), channels: 2, length: 6, class_names: vec!["a".into()], train, test: vec![] };
        let once = znormalize(b);
        for s in &once.train {
            for ch in s.values.chunks(6) {
                let (mean, std) = channel_stats(ch);
                prop_assert!(mean.abs() <= 1e-9);
                prop_assert!((std - 1.0).abs() <= 1e-6 || std < 1e-8);
            }
        }
        let twice = znormalize(once.clone());
        for (a, b) in once.train.iter().zip(&twice.train) {
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn regime_is_a_partition_that_never_labels_hidden_classes(
        counts in prop::collection::vec(1usize..40, 2..6),
        fraction in prop_oneof![Just(0.0), Just(0.2), Just(0.5), Just(1.0), 0.0f64..=1.0],
        hidden_mask in prop::collection::vec(any::<bool>(), 6),
        seed in any::<u64>(),
    ) {
        let k = counts.len();
        let mut hidden: Vec<usize> = (0..k).filter(|&c| hidden_mask[c]).collect();
        if fraction > 0.0 && hidden.len() == k {
            hidden.pop();
        }
        let b = labeled_bundle(&counts, 1, 3);
        let r = build_regime(&b, &regime(fraction, &hidden, seed)).unwrap();
        prop_assert_eq!(r.labeled.len() + r.unlabeled.len() + r.validation.len(), b.train.len());
        let ids: HashSet<u64> = r.labeled.iter().chain(&r.unlabeled).chain(&r.validation).map(|s| s.id).collect();
        prop_assert_eq!(ids.len(), b.train.len());
        prop_assert!(r.labeled.iter().all(|s| !hidden.contains(&s.label.unwrap())));
        prop_assert!(r.unlabeled.iter().all(|s| s.label.is_none()));
        let val = class_counts(&r.validation, k);
        for c in 0..k {
            prop_assert_eq!(val[c], (0.2 * counts[c] as f64).round() as usize);
        }
    }
}

#[test]
fn supervised_regime_has_no_unlabeled_data() {
    let b = labeled_bundle(&[10, 20, 30], 1, 4);
    let r = build_regime(&b, &regime(1.0, &[], 3)).unwrap();
    assert!(r.unlabeled.is_empty());
    assert_eq!(r.labeled.len(), b.train.len() - r.validation.len());
}

#[test]
fn unsupervised_regime_has_no_labels() {
    let b = labeled_bundle(&[10, 20, 30], 1, 4);
    let r = build_regime(&b, &regime(0.0, &[], 3)).unwrap();
    assert!(r.labeled.is_empty());
    assert_eq!(r.unlabeled.len(), b.train.len() - r.validation.len());
}

#[test]
fn hidden_ecg_classes_keep_a_fifth_of_the_visible_labels() {
    // N, S, V, F, Q with V (2) and Q (4) hidden.
    let counts = [500, 60, 90, 25, 80];
    let b = labeled_bundle(&counts, 1, 2);
    let r = build_regime(&b, &regime(0.2, &[2, 4], 9)).unwrap();
    let got = class_counts(&r.labeled, 5);
    for c in [0, 1, 3] {
        let pool = counts[c] - (0.2 * counts[c] as f64).round() as usize;
        assert_eq!(got[c], (0.2 * pool as f64).floor() as usize);
    }
    assert_eq!((got[2], got[4]), (0, 0));
}

#[test]
fn tiny_classes_keep_at_least_one_label() {
    let b = labeled_bundle(&[2, 50], 1, 2);
    let r = build_regime(&b, &regime(0.2, &[], 0)).unwrap();
    assert_eq!(class_counts(&r.labeled, 2)[0], 1);
}

#[test]
fn contradictory_regimes_are_rejected() {
    let b = labeled_bundle(&[5, 5], 1, 2);
    assert!(matches!(build_regime(&b, &regime(0.2, &[0, 1], 0)), Err(DataError::InvalidRegime(_))));
    assert!(build_regime(&b, &regime(0.0, &[0, 1], 0)).is_ok());
    assert!(build_regime(&b, &regime(1.5, &[], 0)).is_err());
    assert!(build_regime(&b, &regime(0.5, &[7], 0)).is_err());
}

#[test]
fn regime_is_seed_deterministic() {
    let b = labeled_bundle(&[30, 30, 30], 1, 2);
    let a = build_regime(&b, &regime(0.5, &[1], 4)).unwrap();
    assert_eq!(a, build_regime(&b, &regime(0.5, &[1], 4)).unwrap());
    assert_ne!(a, build_regime(&b, &regime(0.5, &[1], 5)).unwrap());
}

#[test]
fn smaller_side_is_resampled() {
    let plans = make_batches(100, 1000, 512, 1, 0).unwrap();
    assert_eq!(plans.len(), 2);
    assert_eq!(plans[0].unlabeled.len(), 512);
    assert_eq!(plans[1].unlabeled.len(), 1000 - 512);
    for p in &plans {
        assert_eq!(p.labeled.len(), p.unlabeled.len());
        assert!(p.labeled.iter().all(|&i| i < 100));
    }
    let mut seen: Vec<usize> = plans.iter().flat_map(|p| p.unlabeled.clone()).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..1000).collect::<Vec<_>>());
}

#[test]
fn equal_sides_are_each_consumed_once() {
    let plans = make_batches(512, 512, 512, 7, 3).unwrap();
    assert_eq!(plans.len(), 1);
    for side in [&plans[0].labeled, &plans[0].unlabeled] {
        let mut s = side.clone();
        s.sort_unstable();
        assert_eq!(s, (0..512).collect::<Vec<_>>());
    }
}

#[test]
fn empty_side_gives_empty_halves() {
    let plans = make_batches(0, 70, 32, 0, 0).unwrap();
    assert_eq!(plans.len(), 3);
    assert!(plans.iter().all(|p| p.labeled.is_empty()));
    assert_eq!(make_batches(0, 0, 32, 0, 0), Err(DataError::NothingToBatch));
}

#[test]
fn batch_shuffles_are_reproducible_per_epoch() {
    let a = make_batches(300, 40, 64, 11, 2).unwrap();
    assert_eq!(a, make_batches(300, 40, 64, 11, 2).unwrap());
    assert_ne!(a, make_batches(300, 40, 64, 11, 3).unwrap());
}

#[test]
fn waveform_generator_is_balanced_and_seeded() {
    let spec = WaveformSpec::default();
    let b = waveforms(&spec);
    b.validate().unwrap();
    assert_eq!((b.train.len(), b.test.len(), b.length), (1000, 400, 64));
    assert_eq!(b.train_counts(), [250; 4]);
    assert_eq!(b.test_counts(), [100; 4]);
    assert_eq!(b, waveforms(&spec));
    assert_ne!(b, waveforms(&WaveformSpec { seed: 1, ..spec }));
}
