//! `CLGT` logit/score container and its tab-separated sidecar manifest.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "CLGT"
//! 4       2     format version (u16, currently 1)
//! 6       2     dtype code (u16): 0 = f32, 1 = f64
//! 8       4     n_rows (u32)
//! 12      4     n_cols (u32)
//! 16      ...   row-major payload
//! ```
//!
//! The sidecar holds one `sample_id<TAB>class_id<TAB>pass_index` line per
//! payload row. Rows are pass-major, so every pass repeats the sample order
//! of pass 0.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::scores::{LogitTable, SampleRef, ScoreError, ScoreTable};

pub const MAGIC: &[u8; 4] = b"CLGT";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    fn width(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown dtype code {0}")]
    UnknownDType(u16),
    #[error("truncated or oversized payload: expected {expected} bytes, got {got}")]
    PayloadSize { expected: usize, got: usize },
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error(transparent)]
    Table(#[from] ScoreError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Raw decoded contents of a `CLGT` payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub dtype: DType,
    pub n_rows: usize,
    pub n_cols: usize,
    pub values: Vec<f64>,
}

pub fn encode(dtype: DType, n_rows: usize, n_cols: usize, values: &[f64]) -> Vec<u8> {
    assert_eq!(values.len(), n_rows * n_cols, "value count does not match shape");
    let mut out = Vec::with_capacity(HEADER_LEN + values.len() * dtype.width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(dtype as u16).to_le_bytes());
    out.extend_from_slice(&(n_rows as u32).to_le_bytes());
    out.extend_from_slice(&(n_cols as u32).to_le_bytes());
    match dtype {
        DType::F32 => values
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => values.iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Matrix, FormatError> {
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::PayloadSize {
            expected: HEADER_LEN,
            got: bytes.len(),
        });
    }
    if &bytes[0..4] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let version = u16_at(4);
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let dtype = match u16_at(6) {
        0 => DType::F32,
        1 => DType::F64,
        code => return Err(FormatError::UnknownDType(code)),
    };
    let (n_rows, n_cols) = (u32_at(8), u32_at(12));
    let payload = &bytes[HEADER_LEN..];
    let expected = n_rows * n_cols * dtype.width();
    if payload.len() != expected {
        return Err(FormatError::PayloadSize {
            expected,
            got: payload.len(),
        });
    }
    let values = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok(Matrix {
        dtype,
        n_rows,
        n_cols,
        values,
    })
}

/// Parsed sidecar: the pass-0 sample order and the number of passes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SidecarManifest {
    pub samples: Vec<SampleRef>,
    pub n_passes: usize,
}

pub fn encode_manifest(samples: &[SampleRef], n_passes: usize) -> String {
    let mut out = String::new();
    for pass in 0..n_passes {
        for s in samples {
            out.push_str(&format!("{}\t{}\t{}\n", s.sample_id, s.class_id, pass));
        }
    }
    out
}

pub fn decode_manifest(text: &str) -> Result<SidecarManifest, FormatError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |msg: String| FormatError::Manifest { line: i + 1, msg };
        let fields: Vec<&str> = line.split('\t').collect();
        let [sample, class, pass] = fields[..] else {
            return Err(err(format!("expected 3 fields, got {}", fields.len())));
        };
        if sample.is_empty() || class.is_empty() {
            return Err(err("empty sample or class id".into()));
        }
        let pass: usize = pass.parse().map_err(|_| err(format!("bad pass index `{pass}`")))?;
        rows.push((SampleRef::new(sample, class), pass));
    }
    let n_samples = rows.iter().take_while(|(_, p)| *p == 0).count();
    if n_samples == 0 {
        return Err(FormatError::Manifest {
            line: 1,
            msg: "no pass-0 rows".into(),
        });
    }
    if rows.len() % n_samples != 0 {
        return Err(FormatError::Manifest {
            line: rows.len(),
            msg: format!("{} rows is not a multiple of {n_samples} samples", rows.len()),
        });
    }
    for (i, (sample, pass)) in rows.iter().enumerate() {
        if *pass != i / n_samples || *sample != rows[i % n_samples].0 {
            return Err(FormatError::Manifest {
                line: i + 1,
                msg: "rows must be pass-major with identical sample order per pass".into(),
            });
        }
    }
    let n_passes = rows.len() / n_samples;
    rows.truncate(n_samples);
    Ok(SidecarManifest {
        samples: rows.into_iter().map(|(s, _)| s).collect(),
        n_passes,
    })
}

/// Sidecar path for a `CLGT` file: `<path>.manifest`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest");
    PathBuf::from(name)
}

fn read(path: &Path) -> Result<Vec<u8>, FormatError> {
    fs::read(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn assemble(bytes: &[u8], manifest_text: &str) -> Result<LogitTable, FormatError> {
    let matrix = decode(bytes)?;
    let manifest = decode_manifest(manifest_text)?;
    if manifest.samples.len() * manifest.n_passes != matrix.n_rows {
        return Err(FormatError::Manifest {
            line: 0,
            msg: format!(
                "manifest describes {} rows, payload has {}",
                manifest.samples.len() * manifest.n_passes,
                matrix.n_rows
            ),
        });
    }
    Ok(LogitTable::new(
        manifest.samples,
        matrix.n_cols,
        manifest.n_passes,
        matrix.values,
    )?)
}

/// Decodes an in-memory container plus sidecar text into a table.
pub fn table_from_parts(bytes: &[u8], manifest_text: &str) -> Result<LogitTable, FormatError> {
    assemble(bytes, manifest_text)
}

pub fn read_table(path: &Path) -> Result<LogitTable, FormatError> {
    let bytes = read(path)?;
    let sidecar = sidecar_path(path);
    let text = String::from_utf8(read(&sidecar)?).map_err(|_| FormatError::Manifest {
        line: 0,
        msg: "sidecar is not UTF-8".into(),
    })?;
    assemble(&bytes, &text)
}

/// Encodes a table as `(container bytes, sidecar text)`.
pub fn encode_table(table: &LogitTable, dtype: DType) -> (Vec<u8>, String) {
    let rows = table.n_samples() * table.n_passes();
    (
        encode(dtype, rows, table.n_cols(), table.values()),
        encode_manifest(table.manifest(), table.n_passes()),
    )
}

/// Encodes a score table as a one-column `f64` container.
pub fn encode_scores(table: &ScoreTable) -> (Vec<u8>, String) {
    (
        encode(DType::F64, table.len(), 1, &table.values),
        encode_manifest(&table.manifest, 1),
    )
}

pub fn write_table(path: &Path, table: &LogitTable, dtype: DType) -> Result<(), FormatError> {
    let (bytes, manifest) = encode_table(table, dtype);
    write(path, &bytes)?;
    write(&sidecar_path(path), manifest.as_bytes())
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    fs::write(path, bytes).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}
