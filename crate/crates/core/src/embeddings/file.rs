//! `EMB1` embedding files.
//!
//! Little-endian: magic `EMB1`, version u32, kind u8 (0 voice, 1 face),
//! dim u32, count u32, then per record speaker id and source id
//! (u32-length-prefixed UTF-8) and `dim` f32 values.

use std::path::Path;

use super::{ConditionEmbedding, EmbeddingKind};
use crate::error::{Error, Result};

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
pub const EMB_VERSION: u32 = 1;
const NORM_TOLERANCE: f64 = 1e-3;

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let n = u32::try_from(s.len()).map_err(|_| Error::format("identifier too long"))?;
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn write_embeddings(embs: &[ConditionEmbedding]) -> Result<Vec<u8>> {
    let first = embs
        .first()
        .ok_or_else(|| Error::validation("no embeddings to write"))?;
    let (kind, dim) = (first.kind, first.dim());
    let mut out = Vec::with_capacity(17 + embs.len() * (dim * 4 + 24));
    out.extend_from_slice(EMB_MAGIC);
    out.extend_from_slice(&EMB_VERSION.to_le_bytes());
    out.push(kind.code());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(embs.len() as u32).to_le_bytes());
    for e in embs {
        if e.kind != kind || e.dim() != dim {
            return Err(Error::validation(format!(
                "mixed embeddings: {} {} vs {kind} {dim}",
                e.kind,
                e.dim()
            )));
        }
        put_str(&mut out, &e.speaker_id)?;
        put_str(&mut out, &e.source_id)?;
        for v in &e.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(format!(
                "embedding file truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::format("identifier is not UTF-8"))
    }
}

/// Parse and validate; vectors are renormalized after the norm check.
pub fn read_embeddings(buf: &[u8]) -> Result<Vec<ConditionEmbedding>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != EMB_MAGIC {
        return Err(Error::format("not an embedding file (bad magic)"));
    }
    let version = c.u32()?;
    if version != EMB_VERSION as usize {
        return Err(Error::format(format!(
            "unsupported embedding file version {version}"
        )));
    }
    let kind = EmbeddingKind::from_code(c.take(1)?[0])?;
    let dim = c.u32()?;
    if dim == 0 {
        return Err(Error::format("embedding dim is zero"));
    }
    let count = c.u32()?;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        let speaker_id = c.string()?;
        let source_id = c.string()?;
        let raw = c.take(dim * 4)?;
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(format!(
                "record {i} ({speaker_id}/{source_id}) contains NaN or Inf"
            )));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::format(format!(
                "record {i} ({speaker_id}/{source_id}) has norm {norm:.6}, expected 1"
            )));
        }
        out.push(ConditionEmbedding::new(
            kind, speaker_id, source_id, values,
        )?);
    }
    if c.pos != buf.len() {
        return Err(Error::format(format!(
            "{} trailing bytes after {count} records (dim mismatch?)",
            buf.len() - c.pos
        )));
    }
    Ok(out)
}

pub fn save_embeddings(path: &Path, embs: &[ConditionEmbedding]) -> Result<()> {
    let bytes = write_embeddings(embs)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: &Path) -> Result<Vec<ConditionEmbedding>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(&bytes)
}
