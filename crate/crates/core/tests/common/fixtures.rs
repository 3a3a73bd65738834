//! Writers for the raw benchmark layouts, filled with synthetic values.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Per-class train and test counts of the public distributions, in the class
/// order of each adapter.
pub const HAR_TRAIN: [usize; 6] = [1226, 1073, 986, 1286, 1374, 1407];
pub const HAR_TEST: [usize; 6] = [496, 471, 420, 491, 532, 537];
pub const ECG_TRAIN: [usize; 5] = [72471, 2223, 5788, 641, 6431];
pub const ECG_TEST: [usize; 5] = [18118, 557, 1448, 162, 1607];
pub const ELD_TRAIN: [usize; 7] = [727, 2231, 851, 1474, 2406, 509, 728];
pub const ELD_TEST: [usize; 7] = [667, 1956, 755, 1165, 1869, 743, 556];

/// Labels in a deterministic interleaved order.
pub fn label_sequence(counts: &[usize]) -> Vec<usize> {
    let mut left = counts.to_vec();
    let mut out = Vec::with_capacity(counts.iter().sum());
    while out.len() < out.capacity() {
        for (c, n) in left.iter_mut().enumerate() {
            if *n > 0 {
                *n -= 1;
                out.push(c);
            }
        }
    }
    out
}

fn value(row: usize, col: usize) -> i64 {
    ((row * 31 + col * 7) % 11) as i64 - 5
}

pub fn write_ucr(dir: &Path, name: &str, train: &[usize], test: &[usize], length: usize) {
    fs::create_dir_all(dir).unwrap();
    for (suffix, counts) in [("TRAIN", train), ("TEST", test)] {
        let mut text = String::new();
        for (r, label) in label_sequence(counts).into_iter().enumerate() {
            write!(text, "{}", label + 1).unwrap();
            for t in 0..length {
                write!(text, "\t{}", value(r, t)).unwrap();
            }
            text.push('\n');
        }
        fs::write(dir.join(format!("{name}_{suffix}.tsv")), text).unwrap();
    }
}

/// Writes `mitbih_train.csv` and `mitbih_test.csv` with `width − 1` beat
/// samples per row, the last of which is zero.
pub fn write_mitbih(dir: &Path, train: &[usize], test: &[usize], width: usize) {
    fs::create_dir_all(dir).unwrap();
    for (file, counts) in [("mitbih_train.csv", train), ("mitbih_test.csv", test)] {
        let mut text = String::new();
        for (r, label) in label_sequence(counts).into_iter().enumerate() {
            for t in 0..width - 2 {
                write!(text, "{},", value(r, t)).unwrap();
            }
            writeln!(text, "0.0,{label}.0").unwrap();
        }
        fs::write(dir.join(file), text).unwrap();
    }
}

pub fn write_har(dir: &Path, train: &[usize], test: &[usize]) {
    for (split, counts) in [("train", train), ("test", test)] {
        let signals = dir.join(split).join("Inertial Signals");
        fs::create_dir_all(&signals).unwrap();
        let labels = label_sequence(counts);
        let y: String = labels.iter().map(|l| format!("{}\n", l + 1)).collect();
        fs::write(dir.join(split).join(format!("y_{split}.txt")), y).unwrap();
        for (c, channel) in susl_core::datasets::HAR_CHANNELS.iter().enumerate() {
            let mut text = String::new();
            for r in 0..labels.len() {
                for t in 0..128 {
                    write!(text, " {}", value(r + c, t)).unwrap();
                }
                text.push('\n');
            }
            fs::write(signals.join(format!("{channel}_{split}.txt")), text).unwrap();
        }
    }
}

pub struct StatedConfusion {
    pub name: String,
    pub accuracy: f64,
    pub counts: Vec<Vec<u64>>,
}

/// The tabulated confusion matrices (rows are true classes) with the
/// accuracy printed beside each.
pub fn stated_confusions() -> Vec<StatedConfusion> {
    let text = include_str!("../fixtures/confusion_matrices.txt");
    text.split("\n\n")
        .filter(|b| !b.trim().is_empty())
        .map(|block| {
            let mut lines = block.trim().lines();
            let name = lines.next().unwrap().strip_prefix("matrix ").unwrap().to_string();
            let accuracy = lines.next().unwrap().strip_prefix("accuracy ").unwrap().parse().unwrap();
            let counts = lines.map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect()).collect();
            StatedConfusion { name, accuracy, counts }
        })
        .collect()
}
