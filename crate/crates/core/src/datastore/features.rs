use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"FSEQ";
pub const FEATURE_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4;

/// A time-major `T x D` matrix of per-segment features.
///
/// Values are kept in `f32`, the on-disk precision, so that a read/write cycle
/// is bitwise exact. Model code widens rows to `f64` on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub id: String,
    t: usize,
    d: usize,
    data: Vec<f32>,
}

impl FeatureSequence {
    pub fn new(id: impl Into<String>, t: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if t == 0 || d == 0 {
            return Err(Error::Shape(format!(
                "T and D must be positive, got T={t}, D={d}"
            )));
        }
        if data.len() != t * d {
            return Err(Error::Shape(format!(
                "data has {} values, expected T*D = {}",
                data.len(),
                t * d
            )));
        }
        check_finite(&data, d)?;
        Ok(Self {
            id: id.into(),
            t,
            d,
            data,
        })
    }

    /// Builds a sequence from rows; all rows must share one length.
    pub fn from_rows(id: impl Into<String>, rows: &[Vec<f32>]) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(id, rows.len(), d, data)
    }

    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.d..(t + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.d)
    }

    /// New sequence made of the given source rows, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            id: self.id.clone(),
            t: indices.len(),
            d: self.d,
            data,
        }
    }
}

fn check_finite(data: &[f32], d: usize) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite {
            row: i / d,
            col: i % d,
        }),
        None => Ok(()),
    }
}

/// Serializes to the `FSEQ` binary layout: magic, u16 version, u32 T, u32 D,
/// then `T*D` little-endian f32 values in time-major order.
pub fn encode_features(seq: &FeatureSequence) -> Result<Vec<u8>> {
    check_finite(&seq.data, seq.d)?;
    let t = u32::try_from(seq.t).map_err(|_| Error::Shape("T exceeds u32".into()))?;
    let d = u32::try_from(seq.d).map_err(|_| Error::Shape("D exceeds u32".into()))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + seq.data.len() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&t.to_le_bytes());
    buf.extend_from_slice(&d.to_le_bytes());
    for v in &seq.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn write_features(seq: &FeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf = encode_features(seq)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn decode_features(
    id: impl Into<String>,
    bytes: &[u8],
    path: &Path,
) -> Result<FeatureSequence> {
    if bytes.len() < 4 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "FSEQ",
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FEATURE_VERSION {
        return Err(Error::UnsupportedVersion {
            what: "feature file",
            found: version,
        });
    }
    let t = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    if t == 0 || d == 0 {
        return Err(Error::Shape(format!("header declares T={t}, D={d}")));
    }
    let expected = (t as u64) * (d as u64) * 4;
    let found = (bytes.len() - HEADER_LEN) as u64;
    if found < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("payload has {found} of {expected} bytes"),
        });
    }
    if found > expected {
        return Err(Error::PayloadSize {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    let data: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    FeatureSequence::new(id, t, d, data)
}

/// Reads an `FSEQ` file. The sequence id is the file stem.
pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_features(id, &bytes, path)
}
