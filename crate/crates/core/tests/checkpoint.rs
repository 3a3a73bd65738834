mod common;

use common::tiny_config;
use susl_core::checkpoint::{decode, encode, load, save, CheckpointError};
use susl_core::model::{ModelError, Parameters, Variant};

fn perturbed(seed: u64) -> Parameters {
    let mut p = Parameters::init(tiny_config(Variant::Conv), seed).unwrap();
    // Values whose decimal form does not round-trip through a short print.
    for (i, v) in p.tensors_mut().iter_mut().flat_map(|t| t.data_mut()).enumerate() {
        *v += (i as f64).sqrt() * 1e-13 + f64::EPSILON;
    }
    p
}

#[test]
fn save_and_load_are_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let p = perturbed(4);
    save(&path, &p, "run = \"x\"").unwrap();
    let (back, meta) = load(&path).unwrap();
    assert_eq!(meta, "run = \"x\"");
    for (a, b) in p.tensors().iter().zip(back.tensors()) {
        let bits = |t: &susl_core::diff::Array| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
    assert_eq!(back.config(), p.config());
}

#[test]
fn encoding_twice_gives_identical_bytes() {
    let p = perturbed(5);
    assert_eq!(encode(&p, "m"), encode(&p.clone(), "m"));
    let (back, _) = decode(&encode(&p, "m")).unwrap();
    assert_eq!(encode(&back, "m"), encode(&p, "m"));
}

#[test]
fn every_truncation_is_rejected() {
    let bytes = encode(&perturbed(6), "meta");
    for cut in (0..bytes.len()).step_by(7) {
        assert!(decode(&bytes[..cut]).is_err(), "prefix of {cut} bytes decoded");
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(decode(&long), Err(CheckpointError::Corrupt(_))));
}

#[test]
fn corrupt_headers_are_rejected() {
    let bytes = encode(&perturbed(7), "");
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(decode(&magic), Err(CheckpointError::Corrupt(m)) if m.contains("magic")));
    let mut version = bytes.clone();
    version[8] = 9;
    assert!(matches!(decode(&version), Err(CheckpointError::Corrupt(m)) if m.contains("version")));
}

#[test]
fn tensor_shape_must_match_the_config() {
    let p = perturbed(8);
    let mut bytes = encode(&p, "");
    // Patch the first extent of the first tensor.
    let config_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let meta_at = 16 + config_len;
    let count_at = meta_at + 4 + u32::from_le_bytes(bytes[meta_at..meta_at + 4].try_into().unwrap()) as usize;
    let name_at = count_at + 4;
    let name_len = u32::from_le_bytes(bytes[name_at..name_at + 4].try_into().unwrap()) as usize;
    let extent_at = name_at + 4 + name_len + 4;
    bytes[extent_at] ^= 1;
    assert!(matches!(decode(&bytes), Err(CheckpointError::Model(ModelError::ParameterShape { .. }))));
}

#[test]
fn missing_file_reports_its_path() {
    let err = load(std::path::Path::new("/nonexistent/model.ckpt")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/model.ckpt"));
}
