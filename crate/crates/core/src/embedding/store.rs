//! On-disk vector files.
//!
//! Binary layout (little-endian): magic `CVEC`, `u32` format version,
//! `u32` dim, `u64` count, then per record a `u32` id length, the UTF-8 id
//! bytes and `dim` `f32` values. The text alternative has one
//! `unit_id<TAB>v1 v2 ...` line per record.

use std::fs;
use std::path::Path;

use super::{EmbeddingVector, NORM_TOLERANCE};
use crate::error::{Error, Result};
use crate::records::write_atomic;
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"CVEC";
const VERSION: u32 = 1;

pub fn write_vectors<T: Scalar>(path: &Path, dim: usize, vectors: &[EmbeddingVector<T>]) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + vectors.len() * (dim * 4 + 32));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(vectors.len() as u64).to_le_bytes());
    for v in vectors {
        if v.dim() != dim {
            return Err(Error::validation(format!(
                "{}: vector {} has dim {}, expected {dim}",
                path.display(),
                v.unit_id,
                v.dim()
            )));
        }
        buf.extend_from_slice(&(v.unit_id.len() as u32).to_le_bytes());
        buf.extend_from_slice(v.unit_id.as_bytes());
        for x in &v.values {
            buf.extend_from_slice(&x.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    write_atomic(path, &buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::validation(format!(
                "{}: truncated vector file at byte {}",
                self.path.display(),
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Reads a binary vector file. Vectors are re-normalized after the `f32`
/// round trip; a stored zero or non-finite vector is an error.
pub fn read_vectors<T: Scalar>(path: &Path) -> Result<(usize, Vec<EmbeddingVector<T>>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if c.take(4)? != MAGIC {
        return Err(Error::validation(format!("{}: not a vector file", path.display())));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::validation(format!(
            "{}: unsupported vector file version {version}",
            path.display()
        )));
    }
    let dim = c.u32()? as usize;
    let count = u64::from_le_bytes(c.take(8)?.try_into().expect("8 bytes")) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let n = c.u32()? as usize;
        let id = std::str::from_utf8(c.take(n)?)
            .map_err(|_| Error::validation(format!("{}: non-UTF-8 unit id", path.display())))?
            .to_string();
        let raw = c.take(dim * 4)?;
        let values: Vec<T> = raw
            .chunks_exact(4)
            .map(|b| T::of(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64))
            .collect();
        out.push(renormalize(path, id, values)?);
    }
    if c.pos != bytes.len() {
        return Err(Error::validation(format!("{}: trailing bytes", path.display())));
    }
    Ok((dim, out))
}

fn renormalize<T: Scalar>(path: &Path, id: String, values: Vec<T>) -> Result<EmbeddingVector<T>> {
    let v = EmbeddingVector::normalized(id.clone(), values).ok_or_else(|| {
        Error::validation(format!("{}: vector {id} is zero or non-finite", path.display()))
    })?;
    debug_assert!((v.norm() - 1.0).abs() < NORM_TOLERANCE);
    Ok(v)
}

pub fn write_text_vectors<T: Scalar>(path: &Path, vectors: &[EmbeddingVector<T>]) -> Result<()> {
    let mut out = String::new();
    for v in vectors {
        out.push_str(&v.unit_id);
        out.push('\t');
        let vals: Vec<String> = v.values.iter().map(|x| x.to_string()).collect();
        out.push_str(&vals.join(" "));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_text_vectors<T: Scalar>(path: &Path) -> Result<Vec<EmbeddingVector<T>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<EmbeddingVector<T>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |detail: String| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            detail,
        };
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected unit_id<TAB>values".into()))?;
        let values = rest
            .split_whitespace()
            .map(|x| x.parse::<f64>().map(T::of))
            .collect::<std::result::Result<Vec<T>, _>>()
            .map_err(|e| bad(e.to_string()))?;
        if let Some(first) = out.first() {
            if first.dim() != values.len() {
                return Err(bad(format!("dim {} differs from {}", values.len(), first.dim())));
            }
        }
        out.push(renormalize(path, id.to_string(), values).map_err(|e| bad(e.to_string()))?);
    }
    Ok(out)
}
