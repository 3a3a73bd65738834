use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use susl_core::datasets::synthetic::{waveforms, WaveformSpec};
use susl_core::datasets::write_bundle;

fn susl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_susl"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SUSL_OUTPUT_DIR")
        .env_remove("SUSL_THREADS")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// A small waveform bundle under `dir/bundle`.
fn setup(dir: &Path) {
    let b = waveforms(&WaveformSpec { n_train: 120, n_test: 40, length: 16, ..Default::default() });
    write_bundle(&b, &dir.join("bundle")).unwrap();
}

const SMALL: &[&str] =
    &["--data", "bundle", "--epochs", "2", "--batch-size", "32", "--latent-dim", "3", "--filters", "4", "--units", "8"];

fn with<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(tail).copied().collect()
}

#[test]
fn ingest_writes_a_bundle_with_matching_counts() {
    let dir = tempfile::tempdir().unwrap();
    let ucr = dir.path().join("ucr");
    fs::create_dir(&ucr).unwrap();
    let rows = |n: usize, offset: usize| -> String {
        (0..n).map(|i| format!("{}\t{}\t{}\t0.5\n", (i + offset) % 3 + 1, i, -(i as f64))).collect()
    };
    fs::write(ucr.join("Toy_TRAIN.tsv"), rows(7, 0)).unwrap();
    fs::write(ucr.join("Toy_TEST.tsv"), rows(5, 1)).unwrap();
    let o = susl(&["ingest", "--format", "ucr-tsv", "--data", "ucr", "-o", "out"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    assert!(table.contains("1                           3        1"), "{table}");
    assert!(table.contains("total                       7        5"), "{table}");
    let b = susl_core::datasets::read_bundle(&dir.path().join("out")).unwrap();
    assert_eq!((b.train_counts(), b.test_counts()), (vec![3, 2, 2], vec![1, 2, 2]));
    // Raw values survive: ingest never normalizes.
    assert_eq!(b.train[1].values, [1.0, -1.0, 0.5]);
}

#[test]
fn unsupervised_training_consumes_no_labels() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let o = susl(&with(&["train", "--labeled-fraction", "0", "--augmented", "2", "-o", "ul"], SMALL), dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let history = fs::read_to_string(dir.path().join("ul/history.csv")).unwrap();
    let mut lines = history.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(v[col("labeled_elbo")], 0.0);
        assert_eq!(v[col("classification")], 0.0);
    }
    for f in ["model.ckpt", "final.ckpt", "spec.toml"] {
        assert!(dir.path().join("ul").join(f).exists(), "{f}");
    }
}

#[test]
fn eval_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    assert_eq!(code(&susl(&with(&["train", "-o", "run"], SMALL), dir.path())), 0);
    let files = ["eval_report.txt", "eval_report.json", "eval_confusion.csv", "eval_metrics.csv", "eval_spec.toml"];
    let read = |out: &str| files.map(|f| fs::read(dir.path().join(out).join(f)).unwrap());
    assert_eq!(code(&susl(&["eval", "--checkpoint", "run/model.ckpt", "-o", "e1"], dir.path())), 0);
    assert_eq!(code(&susl(&["eval", "--checkpoint", "run/model.ckpt", "-o", "e2"], dir.path())), 0);
    let (a, mut b) = (read("e1"), read("e2"));
    // The echoed spec names its own output directory.
    b[4] = String::from_utf8(b[4].clone()).unwrap().replace("\"e2\"", "\"e1\"").into_bytes();
    assert_eq!(a, b);
    let table = stdout(&susl(&["report", "e1", "e2"], dir.path()));
    assert_eq!(table.lines().count(), 3);
    assert!(table.lines().nth(1).unwrap().contains("SSL"));
}

#[test]
fn spec_layers_and_echo() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.toml"), "seed = 4\n[train]\nlr = 0.25\nepochs = 9\n").unwrap();
    let o = susl(&["train", "--config", "exp.toml", "--epochs", "3", "--print-config"], dir.path());
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("seed = 4") && text.contains("lr = 0.25") && text.contains("epochs = 3"), "{text}");
    let env = Command::new(env!("CARGO_BIN_EXE_susl"))
        .args(["train", "--print-config"])
        .env("SUSL_OUTPUT_DIR", "elsewhere")
        .output()
        .unwrap();
    assert!(stdout(&env).contains("output_dir = \"elsewhere\""));

    setup(dir.path());
    let o = susl(&with(&["train", "--config", "exp.toml", "-o", "run"], SMALL), dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let printed =
        stdout(&susl(&with(&["train", "--config", "exp.toml", "-o", "run", "--print-config"], SMALL), dir.path()));
    assert_eq!(fs::read_to_string(dir.path().join("run/spec.toml")).unwrap(), printed);
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    assert_eq!(code(&susl(&["train", "--no-such-flag"], dir.path())), 1);
    assert_eq!(code(&susl(&["train", "--data", "bundle", "--epochs", "0"], dir.path())), 1);
    assert_eq!(code(&susl(&["train", "--data", "bundle", "--hidden", "triangle"], dir.path())), 1);
    assert_eq!(code(&susl(&["train", "--data", "missing"], dir.path())), 2);
    assert_eq!(code(&susl(&["eval", "--checkpoint", "missing.ckpt"], dir.path())), 2);
    let o = susl(&with(&["train", "--lr", "1e300", "-o", "boom"], SMALL), dir.path());
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("boom/history.csv").exists());
    assert_eq!(code(&susl(&["--help"], dir.path())), 0);
}

#[test]
fn search_winner_is_reproducible_with_train() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let search = with(
        &["search", "--trials", "3", "-o", "s", "--labeled-fraction", "0.5", "--hidden", "noise"],
        &["--data", "bundle", "--epochs", "2", "--batch-size", "32"],
    );
    let o = susl(&search, dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(dir.path().join("s/trials.jsonl")).unwrap().lines().count(), 3);
    let o = susl(&["train", "--config", "s/best_spec.toml", "-o", "again"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read(dir.path().join("s/best_history.csv")).unwrap(),
        fs::read(dir.path().join("again/history.csv")).unwrap()
    );
    let (best, _) = susl_core::checkpoint::load(&dir.path().join("s/best.ckpt")).unwrap();
    let (again, _) = susl_core::checkpoint::load(&dir.path().join("again/model.ckpt")).unwrap();
    assert_eq!(best, again);
}

#[test]
fn embed_and_sample_write_data_files() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    assert_eq!(code(&susl(&with(&["train", "-o", "run", "--augmented", "1"], SMALL), dir.path())), 0);
    assert_eq!(code(&susl(&["embed", "--checkpoint", "run/model.ckpt"], dir.path())), 0);
    let emb = fs::read_to_string(dir.path().join("run/embeddings.csv")).unwrap();
    assert_eq!(emb.lines().next().unwrap(), "id,true,pred,z_0,z_1,z_2");
    assert_eq!(emb.lines().count(), 121);
    assert_eq!(
        code(&susl(&["sample", "--checkpoint", "run/model.ckpt", "--class", "4", "--count", "3"], dir.path())),
        0
    );
    let samples = fs::read_to_string(dir.path().join("run/samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 4);
    assert_eq!(samples.lines().nth(1).unwrap().split(',').count(), 18);
    assert_eq!(code(&susl(&["sample", "--checkpoint", "run/model.ckpt", "--class", "5"], dir.path())), 1);
}
