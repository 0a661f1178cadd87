mod common;

use acttail::tensor_store::{
    encode_matrices, load_tensor_file_with_report, powerlaw_profile, read_raw_tensors, TensorFileIndex,
};
use acttail::{
    correlation_spectrum, load_tensor_file, parse_name, save_tensor_file, synth_powerlaw_matrix, Error, ProjKind,
    WeightMatrix,
};

/// Hand-assembled file: header JSON plus concatenated payload bytes.
fn raw_file(header: &str, payload: &[u8]) -> Vec<u8> {
    let mut out = (header.len() as u64).to_le_bytes().to_vec();
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(payload);
    out
}

fn write_tmp(bytes: &[u8]) -> tempfile::NamedTempFile {
    let f = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(f.path(), bytes).unwrap();
    f
}

#[test]
fn f32_tensor_is_widened_and_named() {
    let vals: Vec<f32> = (0..16).map(|i| i as f32 * 0.25 - 1.5).collect();
    let payload: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
    let header = r#"{"layers.0.q":{"dtype":"F32","shape":[4,4],"data_offsets":[0,64]}}"#;
    let f = write_tmp(&raw_file(header, &payload));
    let m = load_tensor_file(f.path()).unwrap();
    assert_eq!(m.len(), 1);
    assert_eq!((m[0].layer(), m[0].proj(), m[0].rows(), m[0].cols()), (0, ProjKind::Q, 4, 4));
    let want: Vec<f64> = vals.iter().map(|&v| v as f64).collect();
    assert_eq!(m[0].values(), &want[..]);
}

#[test]
fn f16_tensor_is_widened() {
    let vals = [1.0f32, -0.5, 65504.0, 0.000061035156];
    let payload: Vec<u8> = vals.iter().flat_map(|&v| half::f16::from_f32(v).to_le_bytes()).collect();
    let header = r#"{"w":{"dtype":"F16","shape":[2,2],"data_offsets":[0,8]}}"#;
    let f = write_tmp(&raw_file(header, &payload));
    let m = load_tensor_file(f.path()).unwrap();
    assert_eq!(m[0].values(), &[1.0, -0.5, 65504.0, 0.000061035156f32 as f64]);
}

#[test]
fn empty_entry_list_loads_empty() {
    let f = write_tmp(&raw_file("{}", &[]));
    assert!(load_tensor_file(f.path()).unwrap().is_empty());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.safetensors");
    save_tensor_file(&[], &path).unwrap();
    assert!(load_tensor_file(&path).unwrap().is_empty());
}

#[test]
fn metadata_is_ignored_and_non_2d_skipped() {
    let payload: Vec<u8> = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0].iter().flat_map(|v| v.to_le_bytes()).collect();
    let header = r#"{"__metadata__":{"format":"pt"},
        "norm":{"dtype":"F64","shape":[2],"data_offsets":[0,16]},
        "model.layers.2.mlp.up_proj.weight":{"dtype":"F64","shape":[2,2],"data_offsets":[16,48]}}"#;
    let f = write_tmp(&raw_file(header, &payload));
    let loaded = load_tensor_file_with_report(f.path()).unwrap();
    assert_eq!(loaded.matrices.len(), 1);
    assert_eq!(loaded.matrices[0].values(), &[3.0, 4.0, 5.0, 6.0]);
    assert_eq!(loaded.matrices[0].key().layer, 2);
    assert_eq!(loaded.skipped.len(), 1);
    assert_eq!(loaded.skipped[0].name, "norm");
    assert_eq!(loaded.skipped[0].shape, vec![2]);
}

#[test]
fn format_errors() {
    let cases: Vec<Vec<u8>> = vec![
        vec![1, 2, 3],
        raw_file("{not json", &[]),
        raw_file(r#"{"a":{"dtype":"F64","shape":[1,1],"data_offsets":[0,8]}}"#, &[0; 4]),
        raw_file(r#"{"a":{"dtype":"F64","shape":[2,2],"data_offsets":[0,8]}}"#, &[0; 8]),
        raw_file(
            r#"{"a":{"dtype":"F64","shape":[1,1],"data_offsets":[0,8]},"b":{"dtype":"F64","shape":[1,1],"data_offsets":[4,12]}}"#,
            &[0; 12],
        ),
        raw_file(r#"{"a":{"dtype":"F64","shape":[1,1],"data_offsets":[0,8]},"a":{"dtype":"F64","shape":[1,1],"data_offsets":[8,16]}}"#, &[0; 16]),
    ];
    for (i, bytes) in cases.iter().enumerate() {
        assert!(matches!(TensorFileIndex::parse(bytes), Err(Error::Format(_))), "case {i}");
    }
    let mut long = raw_file("{}", &[]);
    long[..8].copy_from_slice(&1000u64.to_le_bytes());
    assert!(matches!(TensorFileIndex::parse(&long), Err(Error::Format(_))));
}

#[test]
fn unsupported_dtype() {
    let bytes = raw_file(r#"{"a":{"dtype":"BF16","shape":[1,1],"data_offsets":[0,2]}}"#, &[0; 2]);
    assert!(matches!(read_raw_tensors(&bytes), Err(Error::UnsupportedDtype(t)) if t == "BF16"));
}

#[test]
fn missing_file_is_io_error() {
    assert!(matches!(load_tensor_file("/nonexistent/dir/x.safetensors"), Err(Error::Io(_))));
}

#[test]
fn round_trip_distinct_values() {
    let m = WeightMatrix::new("model.layers.0.self_attn.v_proj.weight", 3, 2, vec![0.1, -2.5, 3e-300, 7.0, -0.0, 1e300])
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.safetensors");
    save_tensor_file(std::slice::from_ref(&m), &path).unwrap();
    let back = load_tensor_file(&path).unwrap();
    assert_eq!(back.len(), 1);
    assert_eq!(back[0].name(), m.name());
    let bits: Vec<u64> = back[0].values().iter().map(|v| v.to_bits()).collect();
    let want: Vec<u64> = m.values().iter().map(|v| v.to_bits()).collect();
    assert_eq!(bits, want);
}

#[test]
fn nan_rejected() {
    assert!(WeightMatrix::new("w", 1, 2, vec![1.0, f64::NAN]).is_err());
    assert!(WeightMatrix::new("w", 1, 2, vec![1.0, f64::INFINITY]).is_err());
    let header = r#"{"w":{"dtype":"F64","shape":[1,1],"data_offsets":[0,8]}}"#;
    let f = write_tmp(&raw_file(header, &f64::NAN.to_le_bytes()));
    assert!(load_tensor_file(f.path()).is_err());
}

#[test]
fn shape_validation() {
    assert!(WeightMatrix::new("w", 2, 2, vec![1.0; 3]).is_err());
    assert!(WeightMatrix::new("w", 0, 2, vec![]).is_err());
}

#[test]
fn parse_name_patterns() {
    assert_eq!(parse_name("model.layers.3.self_attn.q_proj.weight"), (3, ProjKind::Q));
    assert_eq!(parse_name("model.layers.12.mlp.down_proj.weight"), (12, ProjKind::Down));
    assert_eq!(parse_name("embed_tokens.weight"), (0, ProjKind::Other));
    assert_eq!(parse_name("model.layers.5.input_layernorm.weight"), (0, ProjKind::Other));
}

#[test]
fn encoded_bytes_are_stable() {
    let a = synth_powerlaw_matrix(8, 6, 3.0, 1).unwrap().renamed("a");
    let b = synth_powerlaw_matrix(5, 9, 4.0, 2).unwrap().renamed("b");
    let first = encode_matrices(&[a.clone(), b.clone()]).unwrap();
    assert_eq!(first, encode_matrices(&[a, b]).unwrap());
    assert_eq!(u64::from_le_bytes(first[..8].try_into().unwrap()) % 8, 0);
}

#[test]
fn synth_contract() {
    assert!(synth_powerlaw_matrix(8, 8, 2.0, 0).is_err());
    assert!(synth_powerlaw_matrix(1, 8, 3.0, 0).is_err());
    let a = synth_powerlaw_matrix(40, 24, 3.0, 7).unwrap();
    let b = synth_powerlaw_matrix(40, 24, 3.0, 7).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, synth_powerlaw_matrix(40, 24, 3.0, 8).unwrap());

    let eig = correlation_spectrum(&a).unwrap();
    let mut profile = powerlaw_profile(24, 3.0);
    profile.reverse();
    for (g, e) in eig.iter().zip(&profile) {
        assert!((g - e).abs() <= 1e-9 * e);
    }
}
