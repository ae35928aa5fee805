use std::fs;
use std::path::Path;

use adafsnet::data::*;
use adafsnet::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tsv_fixture(rng: &mut ChaCha8Rng, rows: usize, width: usize, labels: &[&str]) -> String {
    let mut out = String::new();
    for i in 0..rows {
        out.push_str(labels[i % labels.len()]);
        for _ in 0..width {
            out.push_str(&format!("\t{}", rng.random_range(-3.0..3.0)));
        }
        out.push('\n');
    }
    out
}

fn write_pair(dir: &Path, name: &str, train: &str, test: &str, ext: &str) {
    fs::write(dir.join(format!("{name}_TRAIN.{ext}")), train).unwrap();
    fs::write(dir.join(format!("{name}_TEST.{ext}")), test).unwrap();
}

#[test]
fn tsv_examples() {
    let ds = parse_ucr_tsv("1\t0.5\t0.7\n2\t0.1\t0.2").unwrap();
    assert_eq!((ds.len(), ds.width, ds.dims), (2, 2, 1));
    assert_eq!(ds.class_names, vec!["1", "2"]);
    assert_eq!(ds.samples[1].values[0], vec![0.1, 0.2]);
    let one = parse_ucr_tsv("a,1,2,3\n").unwrap();
    assert_eq!((one.len(), one.width), (1, 3));
}

#[test]
fn ts_multivariate_example() {
    let text = "@problemName toy\n@univariate false\n@classLabel true up down\n@data\n1,2,3:4,5,6:up\n7,8,9:0,0,1:down\n";
    let ds = parse_ts(text).unwrap();
    assert_eq!((ds.dims, ds.width, ds.len()), (2, 3, 2));
    assert_eq!(ds.samples[0].values, vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
    assert_eq!(ds.class_names, vec!["down", "up"]);
    assert_eq!(ds.samples[0].label, 1);
}

#[test]
fn univariate_ts_matches_tsv() {
    let tsv = parse_ucr_tsv("b\t1\t2\t3\na\t4\t5\t6\n").unwrap();
    let ts = parse_ts("@univariate true\n@classLabel true a b\n@data\n1,2,3:b\n4,5,6:a\n").unwrap();
    assert_eq!(ts.samples, tsv.samples);
    assert_eq!(ts.class_names, tsv.class_names);
    assert_eq!((ts.width, ts.dims), (tsv.width, tsv.dims));
}

#[test]
fn undeclared_label_reports_line() {
    let err = parse_ts("@classLabel true a b\n@data\n1,2:a\n3,4:z\n").unwrap_err();
    match err {
        Error::Parse { line, .. } => assert_eq!(line, 4),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn negative_corpus_yields_errors() {
    let tsv_cases = [
        "",
        "\n\n",
        "1\t0.5\t0.7\n2\t0.1\n",
        "1\t0.5\tx\n",
        "1\t?\t0.2\n",
        "1\tNaN\t0.2\n",
        "1\n",
        "1\t1e999x\n",
    ];
    for text in tsv_cases {
        assert!(parse_ucr_tsv(text).is_err(), "{text:?}");
    }
    let ts_cases = [
        "",
        "@classLabel true a\n1,2:a\n",
        "@data\n1,2:a\n",
        "@classLabel true a b\n@data\n1,2:c\n",
        "@classLabel true a\n@data\n1,2:3,4:a\n5,6:a\n",
        "@univariate true\n@classLabel true a\n@data\n1,2:3,4:a\n",
        "@classLabel true a\n@data\n1,x:a\n",
        "@classLabel true a\n@data\n1,?:a\n",
        "@timeStamps true\n@classLabel true a\n@data\n1,2:a\n",
        "@classLabel true a\n@data\n:a\n",
        "@classLabel true a\n@data\n1,2\n",
    ];
    for text in ts_cases {
        assert!(parse_ts(text).is_err(), "{text:?}");
    }
}

#[test]
fn missing_values_interpolate_on_request() {
    let opts = ParseOptions { interpolate_missing: true };
    let ds = parse_ucr_tsv_with("1\t1\t?\t3\tNaN\n", "m", Split::Train, opts).unwrap();
    assert_eq!(ds.samples[0].values[0], vec![1.0, 2.0, 3.0, 3.0]);
}

#[test]
fn znormalize_examples() {
    let (z, constant) = znormalize(&[1.0, 2.0, 3.0]);
    assert!(!constant);
    let want = 1.224744871391589;
    assert!((z[0] + want).abs() < 1e-12 && z[1].abs() < 1e-15 && (z[2] - want).abs() < 1e-12);
    let (z, constant) = znormalize(&[4.0; 6]);
    assert!(constant && z.iter().all(|&v| v == 0.0));
}

#[test]
fn padding_examples() {
    let mut ds = parse_ts("@classLabel true a\n@data\n1,2,3:a\n1,2,3,4,5:a\n").unwrap();
    assert!(ds.is_ragged());
    pad_to_common_length(&mut ds);
    assert_eq!(ds.width, 5);
    assert_eq!(ds.samples[0].values[0], vec![1.0, 2.0, 3.0, 0.0, 0.0]);
    let before = ds.clone();
    pad_to_common_length(&mut ds);
    assert_eq!(ds, before);
}

#[test]
fn label_encoding_examples() {
    let (names, map) = encode_labels(&["2", "1"]);
    assert_eq!(names, vec!["1", "2"]);
    assert_eq!(map["2"], 1);
    let (names, map) = encode_labels(&["only"]);
    assert_eq!((names.len(), map["only"]), (1, 0));
    let (names, _) = encode_labels(&["10", "9", "2"]);
    assert_eq!(names, vec!["10", "2", "9"]);
}

#[test]
fn shuffled_lines_keep_class_names() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let text = tsv_fixture(&mut rng, 30, 4, &["z", "10", "b", "9"]);
    let base = parse_ucr_tsv(&text).unwrap().class_names;
    let mut lines: Vec<&str> = text.lines().collect();
    for _ in 0..10 {
        lines.shuffle(&mut rng);
        assert_eq!(parse_ucr_tsv(&lines.join("\n")).unwrap().class_names, base);
    }
}

#[test]
fn round_trips_are_field_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ds = parse_ucr_tsv(&tsv_fixture(&mut rng, 12, 9, &["x", "y", "z"])).unwrap();
    assert_eq!(parse_ucr_tsv(&to_ucr_tsv(&ds).unwrap()).unwrap(), ds);

    let text = "@problemName toy\n@univariate false\n@classLabel true up down\n@data\n1.25,2,3:4,5,6:up\n7,8:0,0.1:down\n";
    let ts = parse_ts(text).unwrap();
    let back = parse_ts(&to_ts(&ts)).unwrap();
    assert_eq!(back, ts);
}

#[test]
fn gunpoint_shaped_fixture_loads() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let train = tsv_fixture(&mut rng, 50, 150, &["1", "2"]);
    let test = tsv_fixture(&mut rng, 150, 150, &["2", "1"]);
    write_pair(dir.path(), "GunPoint", &train, &test, "tsv");
    let (tr, te) = load_pair(dir.path(), "GunPoint", LoadOptions::default()).unwrap();
    assert_eq!((tr.len(), te.len(), tr.width, te.width), (50, 150, 150, 150));
    assert_eq!((tr.num_classes(), tr.class_names.clone()), (2, te.class_names.clone()));
}

#[test]
fn coffee_shaped_fixture_loads_from_subdirectory() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    fs::create_dir(dir.path().join("Coffee")).unwrap();
    let train = tsv_fixture(&mut rng, 28, 286, &["0", "1"]);
    let test = tsv_fixture(&mut rng, 28, 286, &["1", "0"]);
    write_pair(&dir.path().join("Coffee"), "Coffee", &train, &test, "tsv");
    let (tr, te) = load_pair(dir.path(), "Coffee", LoadOptions::default()).unwrap();
    assert_eq!((tr.len(), te.len(), tr.num_classes()), (28, 28, 2));
    for s in tr.samples.iter().chain(&te.samples) {
        let v = &s.values[0];
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-6);
    }
}

#[test]
fn real_archive_files_when_present() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/ucr");
    let expect = [("GunPoint", 50, 150, 150), ("Coffee", 28, 28, 286)];
    for (name, ntr, nte, w) in expect {
        if !root.join(name).exists() {
            continue;
        }
        let (tr, te) = load_pair(&root, name, LoadOptions::default()).unwrap();
        assert_eq!((tr.len(), te.len(), tr.width, tr.num_classes()), (ntr, nte, w, 2), "{name}");
    }
}

#[test]
fn pair_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_pair(dir.path(), "Nope", LoadOptions::default()), Err(Error::Io { .. } | Error::Dataset(_))));

    fs::write(dir.path().join("Mixed_TRAIN.tsv"), "a\t1\t2\n").unwrap();
    fs::write(dir.path().join("Mixed_TEST.ts"), "@classLabel true a\n@data\n1,2:a\n").unwrap();
    assert!(load_pair(dir.path(), "Mixed", LoadOptions::default()).is_err());

    write_pair(dir.path(), "Extra", "a\t1\t2\nb\t2\t1\n", "a\t1\t2\nc\t0\t3\n", "tsv");
    assert!(load_pair(dir.path(), "Extra", LoadOptions::default()).is_err());

    write_pair(dir.path(), "Widths", "a\t1\t2\nb\t2\t1\n", "a\t1\t2\t3\t4\n", "tsv");
    let (tr, te) = load_pair(dir.path(), "Widths", LoadOptions::default()).unwrap();
    assert_eq!((tr.width, te.width), (4, 4));
}

proptest! {
    #[test]
    fn znormalize_is_idempotent(v in proptest::collection::vec(-1e3f64..1e3, 1..200)) {
        let (once, _) = znormalize(&v);
        let (twice, _) = znormalize(&once);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn tsv_round_trip(rows in proptest::collection::vec((0usize..4, proptest::collection::vec(-1e6f64..1e6, 5)), 1..20)) {
        let text: String = rows
            .iter()
            .map(|(l, vals)| format!("c{l}\t{}\n", vals.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\t")))
            .collect();
        let ds = parse_ucr_tsv(&text).unwrap();
        prop_assert_eq!(parse_ucr_tsv(&to_ucr_tsv(&ds).unwrap()).unwrap(), ds);
    }
}
