//! On-disk feature cache. File layout (little endian): magic `CPDF`,
//! version u16, kind u8, rows u32, cols u32, sample_rate u32, then
//! `rows * cols` f32 values in row-major order.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::{FeatureError, FeatureKind, FeatureMatrix, FeatureParams, Result};

const MAGIC: &[u8; 4] = b"CPDF";
pub const CACHE_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 4 + 4 + 4;

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn corrupt(path: &Path, reason: impl Into<String>) -> FeatureError {
    FeatureError::CorruptCache {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn encode_feature(m: &FeatureMatrix, sample_rate: u32) -> Vec<u8> {
    let (rows, cols) = m.shape();
    let mut buf = Vec::with_capacity(HEADER_LEN + rows * cols * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.push(m.kind.code());
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    buf.extend_from_slice(&sample_rate.to_le_bytes());
    for v in m.values.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

fn decode_feature(path: &Path, bytes: &[u8]) -> Result<(FeatureMatrix, u32)> {
    if bytes.len() < HEADER_LEN {
        return Err(corrupt(path, "truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt(path, "bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CACHE_VERSION {
        return Err(corrupt(path, format!("unsupported version {version}")));
    }
    let kind = FeatureKind::from_code(bytes[6])
        .ok_or_else(|| corrupt(path, format!("unknown kind code {}", bytes[6])))?;
    let rows = u32_at(7) as usize;
    let cols = u32_at(11) as usize;
    let sample_rate = u32_at(15);
    let body = &bytes[HEADER_LEN..];
    if rows.checked_mul(cols).and_then(|n| n.checked_mul(4)) != Some(body.len()) {
        return Err(corrupt(path, format!("{rows}x{cols} does not match payload")));
    }
    let values: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values = Array2::from_shape_vec((rows, cols), values).expect("length checked");
    Ok((FeatureMatrix::new(kind, values), sample_rate))
}

/// Write atomically: a temporary sibling is renamed into place, so readers
/// never observe a partial file.
pub fn write_feature_file(path: &Path, m: &FeatureMatrix, sample_rate: u32) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| FeatureError::io(dir, e))?;
    }
    let tmp = path.with_extension(format!(
        "tmp.{}.{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::write(&tmp, encode_feature(m, sample_rate)).map_err(|e| FeatureError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| FeatureError::io(path, e))
}

pub fn read_feature_file(path: &Path) -> Result<(FeatureMatrix, u32)> {
    let bytes = fs::read(path).map_err(|e| FeatureError::io(path, e))?;
    decode_feature(path, &bytes)
}

/// Directory of cached matrices keyed by (recording, kind, parameter hash).
#[derive(Debug, Clone)]
pub struct FeatureCache {
    root: PathBuf,
}

impl FeatureCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FeatureCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn param_hash(kind: FeatureKind, params: &FeatureParams) -> String {
        let digest = Sha256::digest(params.canonical(kind).as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn path_for(&self, recording: &str, kind: FeatureKind, params: &FeatureParams) -> PathBuf {
        let safe: String = recording
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || "-_.+".contains(c) {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        self.root
            .join(kind.name())
            .join(format!("{safe}.{}.cpdf", Self::param_hash(kind, params)))
    }

    /// Cached matrix if present and readable.
    pub fn load(
        &self,
        recording: &str,
        kind: FeatureKind,
        params: &FeatureParams,
    ) -> Result<Option<FeatureMatrix>> {
        let path = self.path_for(recording, kind, params);
        if !path.exists() {
            return Ok(None);
        }
        let (m, sr) = read_feature_file(&path)?;
        if m.kind != kind || sr != params.sample_rate {
            return Err(corrupt(&path, "header does not match cache key"));
        }
        Ok(Some(m.with_source(recording)))
    }

    pub fn store(&self, recording: &str, params: &FeatureParams, m: &FeatureMatrix) -> Result<PathBuf> {
        let path = self.path_for(recording, m.kind, params);
        write_feature_file(&path, m, params.sample_rate)?;
        Ok(path)
    }

    /// Return the cached matrix, or compute, store, and return it.
    pub fn get_or_compute<F>(
        &self,
        recording: &str,
        kind: FeatureKind,
        params: &FeatureParams,
        compute: F,
    ) -> Result<FeatureMatrix>
    where
        F: FnOnce() -> Result<FeatureMatrix>,
    {
        if let Some(m) = self.load(recording, kind, params)? {
            return Ok(m);
        }
        let m = compute()?.with_source(recording);
        self.store(recording, params, &m)?;
        Ok(m)
    }
}
