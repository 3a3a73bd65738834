//! The canonical two-file bundle.
//!
//! `bundle.meta` holds `key=value` lines:
//!
//! ```text
//! format=susl-bundle-1
//! name=HAR
//! channels=9
//! length=128
//! classes=Walking,Walking up,Walking down,Sitting,Standing,Laying
//! train=7352
//! test=2947
//! ```
//!
//! `bundle.csv` holds one sample per line, train rows first:
//! `split,label,v_0,…,v_{channels·length−1}` with `split` in `train|test`,
//! `label` a class index or `-1`, and values channel-major. Values are
//! written in shortest round-trip form, so reading a written bundle is
//! bit-exact. Sample ids are the row positions.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{DataError, DatasetBundle, SeriesSample};

pub const BUNDLE_META: &str = "bundle.meta";
pub const BUNDLE_DATA: &str = "bundle.csv";
const FORMAT: &str = "susl-bundle-1";

fn io_err(path: &Path, e: impl ToString) -> DataError {
    DataError::Io { path: path.to_path_buf(), message: e.to_string() }
}

pub fn write_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<(), DataError> {
    bundle.validate()?;
    if let Some(bad) = bundle.class_names.iter().find(|n| n.contains([',', '\n', '\r']) || n.is_empty()) {
        return Err(DataError::InvalidBundle(format!("class name {bad:?} cannot be stored")));
    }
    if bundle.name.contains(['\n', '\r']) {
        return Err(DataError::InvalidBundle("bundle name contains a line break".into()));
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let meta = format!(
        "format={FORMAT}\nname={}\nchannels={}\nlength={}\nclasses={}\ntrain={}\ntest={}\n",
        bundle.name,
        bundle.channels,
        bundle.length,
        bundle.class_names.join(","),
        bundle.train.len(),
        bundle.test.len()
    );
    let meta_path = dir.join(BUNDLE_META);
    fs::write(&meta_path, meta).map_err(|e| io_err(&meta_path, e))?;

    let mut data = String::new();
    for (split, samples) in [("train", &bundle.train), ("test", &bundle.test)] {
        for s in samples {
            data.push_str(split);
            match s.label {
                Some(l) => write!(data, ",{l}").unwrap(),
                None => data.push_str(",-1"),
            }
            for v in &s.values {
                write!(data, ",{v}").unwrap();
            }
            data.push('\n');
        }
    }
    let data_path = dir.join(BUNDLE_DATA);
    fs::write(&data_path, data).map_err(|e| io_err(&data_path, e))
}

pub fn read_bundle(dir: &Path) -> Result<DatasetBundle, DataError> {
    let meta_path = dir.join(BUNDLE_META);
    if !meta_path.exists() {
        return Err(DataError::MissingFile(meta_path));
    }
    let meta = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let mut kv = std::collections::HashMap::new();
    for (i, line) in meta.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| DataError::Parse {
            path: meta_path.clone(),
            line: i + 1,
            message: "expected key=value".into(),
        })?;
        kv.insert(k.trim().to_string(), v.to_string());
    }
    let get = |key: &str| {
        kv.get(key)
            .cloned()
            .ok_or_else(|| DataError::InvalidBundle(format!("{}: missing key {key}", meta_path.display())))
    };
    let num = |key: &str| -> Result<usize, DataError> {
        get(key)?.trim().parse().map_err(|_| DataError::InvalidBundle(format!("{key} is not a count")))
    };
    if get("format")? != FORMAT {
        return Err(DataError::InvalidBundle(format!("unsupported format {:?}", get("format")?)));
    }
    let (channels, length) = (num("channels")?, num("length")?);
    let (n_train, n_test) = (num("train")?, num("test")?);
    let class_names: Vec<String> = get("classes")?.split(',').map(str::to_string).collect();
    let width = channels * length;

    let data_path = dir.join(BUNDLE_DATA);
    if !data_path.exists() {
        return Err(DataError::MissingFile(data_path));
    }
    let text = fs::read_to_string(&data_path).map_err(|e| io_err(&data_path, e))?;
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n_test);
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let parse_err = |message: String| DataError::Parse { path: data_path.clone(), line: line_no, message };
        let mut parts = line.split(',');
        let split = parts.next().unwrap_or_default();
        let label: i64 = parts.next().and_then(|l| l.parse().ok()).ok_or_else(|| parse_err("missing label".into()))?;
        let label = match label {
            -1 => None,
            l if l >= 0 && (l as usize) < class_names.len() => Some(l as usize),
            l => return Err(DataError::UnknownLabel { path: data_path.clone(), line: line_no, label: l.to_string() }),
        };
        let values = parts
            .map(|f| f.parse::<f64>().map_err(|_| parse_err(format!("not a number: {f:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != width {
            return Err(DataError::Ragged {
                path: data_path.clone(),
                line: line_no,
                expected: width,
                got: values.len(),
            });
        }
        let id = (train.len() + test.len()) as u64;
        let sample = SeriesSample { id, label, values };
        match split {
            "train" if test.is_empty() => train.push(sample),
            "test" => test.push(sample),
            other => return Err(parse_err(format!("unexpected split {other:?} (train rows must come first)"))),
        }
    }
    if train.len() != n_train || test.len() != n_test {
        return Err(DataError::InvalidBundle(format!(
            "meta declares {n_train}/{n_test} samples, data holds {}/{}",
            train.len(),
            test.len()
        )));
    }
    let bundle = DatasetBundle { name: get("name")?, channels, length, class_names, train, test };
    bundle.validate()?;
    Ok(bundle)
}
