//! Weight matrices, the header-prefixed tensor file format, and synthetic
//! power-law matrices.
//!
//! File layout: an unsigned little-endian `u64` header length `N`, then `N`
//! bytes of UTF-8 JSON mapping each tensor name to
//! `{"dtype", "shape", "data_offsets": [begin, end]}`, then the raw
//! little-endian payloads. Offsets are relative to the first payload byte.
//! The reserved key `__metadata__` holds a string map and is ignored.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{domain, Error, Result};
use crate::linalg;

const METADATA_KEY: &str = "__metadata__";

/// Projection kind inside a transformer layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjKind {
    Q,
    K,
    V,
    O,
    Gate,
    Up,
    Down,
    Other,
}

impl ProjKind {
    /// The seven projections of a LLaMA-style block, in module order.
    pub const BLOCK: [ProjKind; 7] = [
        ProjKind::Q,
        ProjKind::K,
        ProjKind::V,
        ProjKind::O,
        ProjKind::Gate,
        ProjKind::Up,
        ProjKind::Down,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProjKind::Q => "q",
            ProjKind::K => "k",
            ProjKind::V => "v",
            ProjKind::O => "o",
            ProjKind::Gate => "gate",
            ProjKind::Up => "up",
            ProjKind::Down => "down",
            ProjKind::Other => "other",
        }
    }

    pub fn is_attention(self) -> bool {
        matches!(self, ProjKind::Q | ProjKind::K | ProjKind::V | ProjKind::O)
    }

    pub fn is_mlp(self) -> bool {
        matches!(self, ProjKind::Gate | ProjKind::Up | ProjKind::Down)
    }
}

impl fmt::Display for ProjKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProjKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "q" => ProjKind::Q,
            "k" => ProjKind::K,
            "v" => ProjKind::V,
            "o" => ProjKind::O,
            "gate" => ProjKind::Gate,
            "up" => ProjKind::Up,
            "down" => ProjKind::Down,
            "other" => ProjKind::Other,
            _ => return Err(domain(format!("unknown projection kind `{s}`"))),
        })
    }
}

/// `(layer, projection)` identity of a weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProjKey {
    pub layer: usize,
    pub proj: ProjKind,
}

impl ProjKey {
    pub fn new(layer: usize, proj: ProjKind) -> Self {
        Self { layer, proj }
    }
}

impl fmt::Display for ProjKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.layer, self.proj)
    }
}

/// A named projection weight `W ∈ R^{rows × cols}` stored row-major.
///
/// `rows` is the output width and `cols` the input width, so `W·h` consumes a
/// vector of length `cols`. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    name: String,
    layer: usize,
    proj: ProjKind,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl WeightMatrix {
    /// Builds a matrix, deriving layer and projection kind from `name`.
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let (layer, proj) = parse_name(&name);
        Self::with_key(name, layer, proj, rows, cols, values)
    }

    pub fn with_key(
        name: impl Into<String>,
        layer: usize,
        proj: ProjKind,
        rows: usize,
        cols: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        let name = name.into();
        if rows == 0 || cols == 0 {
            return Err(domain(format!("`{name}`: shape [{rows}, {cols}] has a zero dimension")));
        }
        if values.len() != rows * cols {
            return Err(domain(format!(
                "`{name}`: {} values for shape [{rows}, {cols}]",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(domain(format!("`{name}`: non-finite value at flat index {pos}")));
        }
        Ok(Self { name, layer, proj, rows, cols, values })
    }

    /// Same values under a different name; layer and kind are re-parsed.
    pub fn renamed(self, name: impl Into<String>) -> Self {
        let name = name.into();
        let (layer, proj) = parse_name(&name);
        Self { name, layer, proj, ..self }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn proj(&self) -> ProjKind {
        self.proj
    }

    pub fn key(&self) -> ProjKey {
        ProjKey::new(self.layer, self.proj)
    }

    /// Output width `d_out`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Input width `d_in`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn params(&self) -> usize {
        self.rows * self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

/// Extracts `(layer, projection)` from a checkpoint tensor name.
///
/// Recognizes `layers.N` (also `layer.N` and `h.N`) segments and the LLaMA
/// projection suffixes. Anything else maps to `(0, Other)`.
pub fn parse_name(raw: &str) -> (usize, ProjKind) {
    const PATTERNS: [(&str, ProjKind); 7] = [
        ("gate_proj", ProjKind::Gate),
        ("down_proj", ProjKind::Down),
        ("up_proj", ProjKind::Up),
        ("q_proj", ProjKind::Q),
        ("k_proj", ProjKind::K),
        ("v_proj", ProjKind::V),
        ("o_proj", ProjKind::O),
    ];
    let segments: Vec<&str> = raw.split('.').collect();

    let proj = segments
        .iter()
        .find_map(|seg| PATTERNS.iter().find(|(pat, _)| seg == pat).map(|&(_, kind)| kind))
        .or_else(|| {
            // Short names such as `layers.0.q`.
            segments.iter().skip(1).find_map(|seg| match *seg {
                "q" | "k" | "v" | "o" | "gate" | "up" | "down" => seg.parse().ok(),
                _ => None,
            })
        })
        .unwrap_or(ProjKind::Other);

    if proj == ProjKind::Other {
        return (0, ProjKind::Other);
    }
    let layer = segments
        .windows(2)
        .find_map(|w| match w[0] {
            "layers" | "layer" | "h" | "blocks" => w[1].parse::<usize>().ok(),
            _ => None,
        })
        .unwrap_or(0);
    (layer, proj)
}

/// Payload element type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    F16,
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F16 => 2,
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn parse(tag: &str) -> Result<Self> {
        match tag {
            "F16" => Ok(Dtype::F16),
            "F32" => Ok(Dtype::F32),
            "F64" => Ok(Dtype::F64),
            other => Err(Error::UnsupportedDtype(other.to_string())),
        }
    }
}

/// One header entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    /// Byte range relative to the start of the payload section.
    pub begin: usize,
    pub end: usize,
}

/// Parsed and validated header of a tensor file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TensorFileIndex {
    /// Entries ordered by payload offset.
    pub entries: Vec<TensorEntry>,
    /// Absolute offset of the payload section.
    pub payload_start: usize,
}

#[derive(Deserialize)]
struct RawEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

/// Header object with insertion order kept and duplicate keys rejected.
struct RawHeader(Vec<(String, serde_json::Value)>);

impl<'de> Deserialize<'de> for RawHeader {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct HeaderVisitor;

        impl<'de> Visitor<'de> for HeaderVisitor {
            type Value = RawHeader;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object of tensor entries")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<RawHeader, A::Error> {
                let mut seen = HashSet::new();
                let mut out = Vec::new();
                while let Some((key, value)) = map.next_entry::<String, serde_json::Value>()? {
                    if !seen.insert(key.clone()) {
                        return Err(de::Error::custom(format!("duplicate tensor name `{key}`")));
                    }
                    out.push((key, value));
                }
                Ok(RawHeader(out))
            }
        }

        deserializer.deserialize_map(HeaderVisitor)
    }
}

impl TensorFileIndex {
    /// Parses and validates the header of an in-memory file.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Format(format!("file is {} bytes, shorter than the length prefix", bytes.len())));
        }
        let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
        let available = (bytes.len() - 8) as u64;
        if header_len > available {
            return Err(Error::Format(format!(
                "header length {header_len} exceeds the {available} bytes after the prefix"
            )));
        }
        let header_len = header_len as usize;
        let payload_start = 8 + header_len;
        let payload_len = bytes.len() - payload_start;

        let text = std::str::from_utf8(&bytes[8..payload_start])
            .map_err(|e| Error::Format(format!("header is not UTF-8: {e}")))?;
        let raw: RawHeader =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("malformed header: {e}")))?;

        let mut entries = Vec::with_capacity(raw.0.len());
        for (name, value) in raw.0 {
            if name == METADATA_KEY {
                continue;
            }
            let entry: RawEntry = serde_json::from_value(value)
                .map_err(|e| Error::Format(format!("entry `{name}`: {e}")))?;
            let dtype = Dtype::parse(&entry.dtype)?;
            let [begin, end] = entry.data_offsets;
            if begin > end || end > payload_len {
                return Err(Error::Format(format!(
                    "entry `{name}`: offsets [{begin}, {end}] outside the {payload_len}-byte payload"
                )));
            }
            let count = entry
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("entry `{name}`: shape overflows")))?;
            if count.checked_mul(dtype.size()) != Some(end - begin) {
                return Err(Error::Format(format!(
                    "entry `{name}`: shape {:?} of {:?} needs {} bytes, offsets span {}",
                    entry.shape,
                    dtype,
                    count.saturating_mul(dtype.size()),
                    end - begin
                )));
            }
            entries.push(TensorEntry { name, dtype, shape: entry.shape, begin, end });
        }

        entries.sort_by_key(|e| (e.begin, e.end));
        for pair in entries.windows(2) {
            if pair[1].begin < pair[0].end {
                return Err(Error::Format(format!(
                    "entries `{}` and `{}` overlap",
                    pair[0].name, pair[1].name
                )));
            }
        }
        Ok(Self { entries, payload_start })
    }
}

/// A tensor that was present in the file but not loaded as a matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedTensor {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Result of [`load_tensor_file_with_report`].
#[derive(Debug, Clone, Default)]
pub struct LoadedTensors {
    pub matrices: Vec<WeightMatrix>,
    pub skipped: Vec<SkippedTensor>,
}

fn decode(dtype: Dtype, raw: &[u8]) -> Vec<f64> {
    match dtype {
        Dtype::F16 => raw
            .chunks_exact(2)
            .map(|c| half::f16::from_le_bytes([c[0], c[1]]).to_f64())
            .collect(),
        Dtype::F32 => raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect(),
        Dtype::F64 => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    }
}

/// Decodes every tensor in a file as a flat `f64` array, regardless of rank.
pub fn read_raw_tensors(bytes: &[u8]) -> Result<Vec<(TensorEntry, Vec<f64>)>> {
    let index = TensorFileIndex::parse(bytes)?;
    let payload = &bytes[index.payload_start..];
    Ok(index
        .entries
        .into_iter()
        .map(|e| {
            let values = decode(e.dtype, &payload[e.begin..e.end]);
            (e, values)
        })
        .collect())
}

/// Loads every 2-D tensor, widening payloads to `f64`, and reports the
/// tensors that were skipped because they are not matrices.
pub fn load_tensor_file_with_report(path: impl AsRef<Path>) -> Result<LoadedTensors> {
    let bytes = fs::read(path.as_ref())?;
    let mut out = LoadedTensors::default();
    for (entry, values) in read_raw_tensors(&bytes)? {
        if entry.shape.len() != 2 {
            log::warn!("skipping `{}`: shape {:?} is not 2-D", entry.name, entry.shape);
            out.skipped.push(SkippedTensor { name: entry.name, shape: entry.shape });
            continue;
        }
        let (rows, cols) = (entry.shape[0], entry.shape[1]);
        if rows == 0 || cols == 0 {
            log::warn!("skipping `{}`: empty shape {:?}", entry.name, entry.shape);
            out.skipped.push(SkippedTensor { name: entry.name, shape: entry.shape });
            continue;
        }
        out.matrices.push(WeightMatrix::new(entry.name, rows, cols, values)?);
    }
    Ok(out)
}

/// Loads every 2-D tensor of a file as a [`WeightMatrix`].
pub fn load_tensor_file(path: impl AsRef<Path>) -> Result<Vec<WeightMatrix>> {
    load_tensor_file_with_report(path).map(|loaded| loaded.matrices)
}

/// Named `f64` tensor of arbitrary rank, for writing.
pub struct TensorRef<'a> {
    pub name: &'a str,
    pub shape: Vec<usize>,
    pub values: &'a [f64],
}

/// Serializes tensors as `F64` in the order given.
pub fn encode_f64_tensors(tensors: &[TensorRef<'_>]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut header = String::from("{");
    let mut offset = 0usize;
    for (i, t) in tensors.iter().enumerate() {
        if t.name == METADATA_KEY || !seen.insert(t.name) {
            return Err(domain(format!("tensor name `{}` is reserved or repeated", t.name)));
        }
        if t.shape.iter().product::<usize>() != t.values.len() {
            return Err(domain(format!("`{}`: shape {:?} does not match {} values", t.name, t.shape, t.values.len())));
        }
        let end = offset + t.values.len() * 8;
        if i > 0 {
            header.push(',');
        }
        header.push_str(&serde_json::to_string(t.name)?);
        header.push(':');
        header.push_str(&serde_json::to_string(&serde_json::json!({
            "dtype": "F64",
            "shape": t.shape,
            "data_offsets": [offset, end],
        }))?);
        offset = end;
    }
    header.push('}');
    // Pad with spaces so the payload starts 8-byte aligned.
    while header.len() % 8 != 0 {
        header.push(' ');
    }

    let mut out = Vec::with_capacity(8 + header.len() + offset);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for t in tensors {
        for v in t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes matrices as `F64` tensors. Loading the file back reproduces names,
/// shapes and values exactly.
pub fn save_tensor_file(matrices: &[WeightMatrix], path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_matrices(matrices)?;
    let mut file = fs::File::create(path.as_ref())?;
    file.write_all(&bytes)?;
    file.flush()?;
    Ok(())
}

/// In-memory form of [`save_tensor_file`].
pub fn encode_matrices(matrices: &[WeightMatrix]) -> Result<Vec<u8>> {
    for m in matrices {
        if let Some(pos) = m.values.iter().position(|v| !v.is_finite()) {
            return Err(domain(format!("`{}`: non-finite value at flat index {pos}", m.name)));
        }
    }
    let refs: Vec<TensorRef<'_>> = matrices
        .iter()
        .map(|m| TensorRef { name: &m.name, shape: vec![m.rows, m.cols], values: &m.values })
        .collect();
    encode_f64_tensors(&refs)
}

/// Squared singular values `σ_j² = j^{-1/(α-1)}`, `j = 1..=n`.
pub fn powerlaw_profile(n: usize, alpha: f64) -> Vec<f64> {
    let exponent = -1.0 / (alpha - 1.0);
    (1..=n).map(|j| (j as f64).powf(exponent)).collect()
}

/// Builds `W = U·diag(σ)·Vᵀ` with Haar-random orthonormal `U`, `V` and
/// `σ_j² = j^{-1/(α-1)}`, so the spectrum of `WᵀW` has a power-law tail with
/// exponent `α`. Deterministic in `seed`.
pub fn synth_powerlaw_matrix(rows: usize, cols: usize, alpha: f64, seed: u64) -> Result<WeightMatrix> {
    if rows < 2 || cols < 2 {
        return Err(domain(format!("synthetic matrix needs rows, cols >= 2, got [{rows}, {cols}]")));
    }
    if !(alpha > 2.0) || !alpha.is_finite() {
        return Err(domain(format!("tail exponent must be finite and > 2, got {alpha}")));
    }
    let rank = rows.min(cols);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = linalg::random_orthonormal(&mut rng, rows, rank);
    let v = linalg::random_orthonormal(&mut rng, cols, rank);
    let sigma: Vec<f64> = powerlaw_profile(rank, alpha).into_iter().map(f64::sqrt).collect();

    let scaled = Mat::from_fn(rows, rank, |i, j| u[(i, j)] * sigma[j]);
    let w = &scaled * v.transpose();
    let values = linalg::to_row_major(w.as_ref());
    WeightMatrix::with_key(
        format!("synth.{rows}x{cols}.alpha{alpha}"),
        0,
        ProjKind::Other,
        rows,
        cols,
        values,
    )
}
