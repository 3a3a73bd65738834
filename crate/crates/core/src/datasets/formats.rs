//! Adapters for the raw public distributions of the three benchmarks.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{DataError, DatasetBundle, SeriesSample};

pub const HAR_CLASSES: [&str; 6] = ["Walking", "Walking up", "Walking down", "Sitting", "Standing", "Laying"];

/// File stems of the nine inertial channels, in bundle channel order.
pub const HAR_CHANNELS: [&str; 9] = [
    "body_acc_x",
    "body_acc_y",
    "body_acc_z",
    "body_gyro_x",
    "body_gyro_y",
    "body_gyro_z",
    "total_acc_x",
    "total_acc_y",
    "total_acc_z",
];

const HAR_LENGTH: usize = 128;

pub const MITBIH_CLASSES: [&str; 5] = ["N", "S", "V", "F", "Q"];

fn read_text(path: &Path) -> Result<String, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| DataError::Io { path: path.to_path_buf(), message: e.to_string() })
}

fn fields(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty())
}

fn parse_value(path: &Path, line: usize, field: &str) -> Result<f64, DataError> {
    let v: f64 = field.parse().map_err(|_| DataError::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("not a number: {field:?}"),
    })?;
    if !v.is_finite() {
        return Err(DataError::Parse { path: path.to_path_buf(), line, message: format!("non-finite value {field}") });
    }
    Ok(v)
}

/// Parses a label field that must hold an integer, possibly written as a
/// float (`"3.0"`, `"0.000000000000000000e+00"`).
fn parse_integer_label(path: &Path, line: usize, field: &str) -> Result<i64, DataError> {
    let unknown = || DataError::UnknownLabel { path: path.to_path_buf(), line, label: field.to_string() };
    let v: f64 = field.parse().map_err(|_| unknown())?;
    if !v.is_finite() || v.fract() != 0.0 || v.abs() > 1e15 {
        return Err(unknown());
    }
    Ok(v as i64)
}

struct LabeledRows {
    labels: Vec<(usize, i64)>,
    values: Vec<Vec<f64>>,
}

/// Reads rows of `label v_1 … v_n`, requiring every row to have the width of
/// the first one.
fn read_label_first(path: &Path) -> Result<LabeledRows, DataError> {
    let text = read_text(path)?;
    let mut rows = LabeledRows { labels: vec![], values: vec![] };
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let parts: Vec<&str> = fields(line).collect();
        if parts.is_empty() {
            continue;
        }
        let label = parse_integer_label(path, line_no, parts[0])?;
        let expected = *width.get_or_insert(parts.len() - 1);
        if parts.len() - 1 != expected || expected == 0 {
            return Err(DataError::Ragged { path: path.to_path_buf(), line: line_no, expected, got: parts.len() - 1 });
        }
        let values = parts[1..].iter().map(|f| parse_value(path, line_no, f)).collect::<Result<Vec<_>, _>>()?;
        rows.labels.push((line_no, label));
        rows.values.push(values);
    }
    Ok(rows)
}

fn find_split_file(dir: &Path, suffix: &str) -> Result<PathBuf, DataError> {
    let entries = fs::read_dir(dir).map_err(|e| DataError::Io { path: dir.to_path_buf(), message: e.to_string() })?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(&format!("{suffix}.tsv")) || n.ends_with(&format!("{suffix}.txt")))
        })
        .collect();
    found.sort();
    found.into_iter().next().ok_or_else(|| DataError::MissingFile(dir.join(format!("*{suffix}.tsv"))))
}

/// Reads a UCR-archive dataset directory holding `<Name>_TRAIN.tsv` and
/// `<Name>_TEST.tsv` (`.txt` is accepted too). Each row is an integer class
/// label followed by the series. Labels are remapped to `0..K` in ascending
/// numeric order of the training labels; their original spelling becomes the
/// class name.
pub fn ingest_ucr_tsv(dir: &Path) -> Result<DatasetBundle, DataError> {
    let train_path = find_split_file(dir, "_TRAIN")?;
    let test_path = find_split_file(dir, "_TEST")?;
    let name = train_path
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.rsplit_once("_TRAIN"))
        .map(|(stem, _)| stem.to_string())
        .unwrap_or_else(|| "ucr".into());
    let train = read_label_first(&train_path)?;
    let test = read_label_first(&test_path)?;
    let length =
        train.values.first().map(|v| v.len()).ok_or_else(|| DataError::InvalidBundle("empty train file".into()))?;
    if let Some((i, v)) = test.values.iter().enumerate().find(|(_, v)| v.len() != length) {
        return Err(DataError::Ragged { path: test_path, line: test.labels[i].0, expected: length, got: v.len() });
    }

    let mut index: BTreeMap<i64, usize> = train.labels.iter().map(|&(_, l)| (l, 0)).collect();
    for (i, v) in index.values_mut().enumerate() {
        *v = i;
    }
    let class_names = index.keys().map(|l| l.to_string()).collect();
    let convert = |rows: LabeledRows, path: &Path, first_id: u64| -> Result<Vec<SeriesSample>, DataError> {
        rows.labels
            .into_iter()
            .zip(rows.values)
            .enumerate()
            .map(|(i, ((line, label), values))| {
                let class = *index.get(&label).ok_or_else(|| DataError::UnknownLabel {
                    path: path.to_path_buf(),
                    line,
                    label: label.to_string(),
                })?;
                Ok(SeriesSample { id: first_id + i as u64, label: Some(class), values })
            })
            .collect()
    };
    let train_samples = convert(train, &train_path, 0)?;
    let test_samples = convert(test, &test_path, train_samples.len() as u64)?;
    let bundle = DatasetBundle { name, channels: 1, length, class_names, train: train_samples, test: test_samples };
    bundle.validate()?;
    Ok(bundle)
}

struct LabelLastRows {
    width: usize,
    rows: Vec<(usize, Vec<f64>)>,
}

fn read_label_last(path: &Path) -> Result<LabelLastRows, DataError> {
    let text = read_text(path)?;
    let mut out = LabelLastRows { width: 0, rows: vec![] };
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let parts: Vec<&str> = fields(line).collect();
        if parts.is_empty() {
            continue;
        }
        if first && parts.iter().any(|p| p.parse::<f64>().is_err()) {
            // A header is tolerated only as the very first line.
            first = false;
            continue;
        }
        first = false;
        if out.width == 0 {
            out.width = parts.len();
        }
        if parts.len() != out.width {
            return Err(DataError::Ragged {
                path: path.to_path_buf(),
                line: line_no,
                expected: out.width - 1,
                got: parts.len().saturating_sub(1),
            });
        }
        let row = parts.iter().map(|f| parse_value(path, line_no, f)).collect::<Result<Vec<_>, _>>()?;
        out.rows.push((line_no, row));
    }
    Ok(out)
}

/// Reads the MIT-BIH heartbeat CSVs: one beat per row, the class (`0..=4` for
/// N, S, V, F, Q) in the last column. Beats have 186 or 187 samples; a
/// trailing column that is zero in every row of both files is padding and is
/// dropped, leaving 186.
pub fn ingest_mitbih_csv(train_path: &Path, test_path: &Path) -> Result<DatasetBundle, DataError> {
    let train = read_label_last(train_path)?;
    let test = read_label_last(test_path)?;
    if train.rows.is_empty() {
        return Err(DataError::InvalidBundle(format!("{}: no rows", train_path.display())));
    }
    if !test.rows.is_empty() && test.width != train.width {
        return Err(DataError::Ragged {
            path: test_path.to_path_buf(),
            line: test.rows[0].0,
            expected: train.width - 1,
            got: test.width - 1,
        });
    }
    let mut length = train.width - 1;
    if length != 186 && length != 187 {
        return Err(DataError::InvalidBundle(format!("beats have {length} samples, expected 186 or 187")));
    }
    if length == 187 {
        let pad = length - 1;
        let all_zero = train.rows.iter().chain(&test.rows).all(|(_, r)| r[pad] == 0.0);
        if all_zero {
            length = 186;
        } else {
            log::warn!("MIT-BIH: last beat column is not all zero; keeping 187 samples");
        }
    }
    let width = train.width;
    let convert = |rows: Vec<(usize, Vec<f64>)>, path: &Path, first_id: u64| -> Result<Vec<SeriesSample>, DataError> {
        rows.into_iter()
            .enumerate()
            .map(|(i, (line, mut row))| {
                let raw = row[width - 1];
                let label = (raw.fract() == 0.0 && raw >= 0.0 && raw < MITBIH_CLASSES.len() as f64)
                    .then_some(raw as usize)
                    .ok_or_else(|| DataError::UnknownLabel {
                        path: path.to_path_buf(),
                        line,
                        label: raw.to_string(),
                    })?;
                row.truncate(length);
                Ok(SeriesSample { id: first_id + i as u64, label: Some(label), values: row })
            })
            .collect()
    };
    let train_samples = convert(train.rows, train_path, 0)?;
    let test_samples = convert(test.rows, test_path, train_samples.len() as u64)?;
    let bundle = DatasetBundle {
        name: "MIT-BIH".into(),
        channels: 1,
        length,
        class_names: MITBIH_CLASSES.iter().map(|s| s.to_string()).collect(),
        train: train_samples,
        test: test_samples,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Reads one whitespace-separated matrix of `HAR_LENGTH` columns.
fn read_har_channel(path: &Path) -> Result<Vec<Vec<f64>>, DataError> {
    let text = read_text(path)?;
    let mut rows = vec![];
    for (i, line) in text.lines().enumerate() {
        let parts: Vec<&str> = fields(line).collect();
        if parts.is_empty() {
            continue;
        }
        if parts.len() != HAR_LENGTH {
            return Err(DataError::Ragged {
                path: path.to_path_buf(),
                line: i + 1,
                expected: HAR_LENGTH,
                got: parts.len(),
            });
        }
        rows.push(parts.iter().map(|f| parse_value(path, i + 1, f)).collect::<Result<Vec<_>, _>>()?);
    }
    Ok(rows)
}

fn read_har_split(dir: &Path, split: &str, first_id: u64) -> Result<Vec<SeriesSample>, DataError> {
    let split_dir = dir.join(split);
    let label_path = split_dir.join(format!("y_{split}.txt"));
    let mut labels = vec![];
    for (i, line) in read_text(&label_path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let raw = parse_integer_label(&label_path, i + 1, line)?;
        if !(1..=6).contains(&raw) {
            return Err(DataError::UnknownLabel { path: label_path.clone(), line: i + 1, label: line.to_string() });
        }
        labels.push(raw as usize - 1);
    }
    // Check every channel file exists before parsing any of them.
    let paths: Vec<PathBuf> =
        HAR_CHANNELS.iter().map(|c| split_dir.join("Inertial Signals").join(format!("{c}_{split}.txt"))).collect();
    if let Some(missing) = paths.iter().find(|p| !p.exists()) {
        return Err(DataError::MissingFile(missing.clone()));
    }
    let mut values: Vec<Vec<f64>> = labels.iter().map(|_| Vec::with_capacity(9 * HAR_LENGTH)).collect();
    for (c, path) in paths.iter().enumerate() {
        let rows = read_har_channel(path)?;
        if rows.len() != labels.len() {
            return Err(DataError::RowCountMismatch {
                what: format!("{} vs {}", path.display(), label_path.display()),
                left: rows.len(),
                right: labels.len(),
            });
        }
        debug_assert!(values.iter().all(|v| v.len() == c * HAR_LENGTH));
        for (dst, row) in values.iter_mut().zip(rows) {
            dst.extend(row);
        }
    }
    Ok(labels
        .into_iter()
        .zip(values)
        .enumerate()
        .map(|(i, (label, values))| SeriesSample { id: first_id + i as u64, label: Some(label), values })
        .collect())
}

/// Reads the UCI HAR directory layout (`train/` and `test/`, each with
/// `Inertial Signals/` and `y_<split>.txt`) into a nine-channel bundle.
/// Activity codes `1..=6` become classes `0..=5` in [`HAR_CLASSES`] order.
pub fn ingest_har_dir(dir: &Path) -> Result<DatasetBundle, DataError> {
    let train = read_har_split(dir, "train", 0)?;
    let test = read_har_split(dir, "test", train.len() as u64)?;
    let bundle = DatasetBundle {
        name: "HAR".into(),
        channels: HAR_CHANNELS.len(),
        length: HAR_LENGTH,
        class_names: HAR_CLASSES.iter().map(|s| s.to_string()).collect(),
        train,
        test,
    };
    bundle.validate()?;
    Ok(bundle)
}
