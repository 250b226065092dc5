//! The two runtime embedding backends and their memory accounting.
//!
//! A [`CodecTable`] materializes every vocabulary row once (V×D dense, f32)
//! so the forward pass is a gather; a [`ByteBuffer`] keeps only the
//! truncated token bytes plus per-token lengths and reconstructs rows on
//! demand. Both route each row through the same f64 pipeline and the same
//! single f64→f32 rounding point, so their outputs agree bit for bit.
//!
//! Table construction and dynamic reconstruction are data-parallel across
//! rows when the `parallel` feature (on by default) is enabled; each row
//! is written independently, so results never depend on worker count.
//! [`build_table_serial`] is the always-available sequential reference.

use std::path::Path;

use crate::codec::{encode, fill_row_f32, truncate_utf8_safe, CodecConfig, BYTE_DIM};
use crate::error::{Error, Result};
use crate::io;
pub use crate::io::Scalar;
use crate::matrix::Matrix;
use crate::vocab::Vocabulary;

/// Dense precomputed codec table: row `i` is the (optionally z-normalized)
/// codec vector of token `i`.
#[derive(Debug, Clone)]
pub struct CodecTable {
    config: CodecConfig,
    rows: Matrix,
    truncated_ids: Vec<u32>,
}

impl CodecTable {
    pub fn vocab_size(&self) -> usize {
        self.rows.rows()
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    pub fn matrix(&self) -> &Matrix {
        &self.rows
    }

    /// Token ids whose byte sequence was shortened to fit `d_p`.
    /// Populated by the builders; not persisted in the file format.
    pub fn truncated_ids(&self) -> &[u32] {
        &self.truncated_ids
    }

    pub fn row(&self, id: u32) -> Result<&[f32]> {
        if id as usize >= self.rows.rows() {
            return Err(Error::IdOutOfRange { id, vocab_size: self.rows.rows() });
        }
        Ok(self.rows.row(id as usize))
    }

    pub fn to_file(&self, path: &Path, scalar: Scalar) -> Result<()> {
        io::write_table(
            path,
            BYTE_DIM as u32,
            self.config.d_p() as u32,
            scalar,
            self.config.apply_znorm(),
            &self.rows,
        )
    }

    pub fn from_file(path: &Path) -> Result<CodecTable> {
        let t = io::read_table(path)?;
        if t.d_c != BYTE_DIM as u32 {
            return Err(Error::FileFormat {
                path: path.display().to_string(),
                reason: format!("unsupported byte dimension {}", t.d_c),
            });
        }
        let config = CodecConfig::new(t.d_p as usize)?.with_znorm(t.apply_znorm);
        Ok(CodecTable { config, rows: t.data, truncated_ids: Vec::new() })
    }
}

/// Compact backend state: truncated raw bytes (zero-padded to `d_p` per
/// token) and the live length of each row.
#[derive(Debug, Clone)]
pub struct ByteBuffer {
    config: CodecConfig,
    bytes: Vec<u8>,
    lengths: Vec<i16>,
}

impl ByteBuffer {
    pub fn vocab_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    pub fn lengths(&self) -> &[i16] {
        &self.lengths
    }

    /// The live (post-truncation) bytes of one token.
    pub fn token_bytes(&self, id: u32) -> Result<&[u8]> {
        let i = id as usize;
        if i >= self.lengths.len() {
            return Err(Error::IdOutOfRange { id, vocab_size: self.lengths.len() });
        }
        let d_p = self.config.d_p();
        Ok(&self.bytes[i * d_p..i * d_p + self.lengths[i] as usize])
    }

    /// In-memory payload: V·(d_p+2) bytes.
    pub fn footprint_bytes(&self) -> u64 {
        self.lengths.len() as u64 * (self.config.d_p() as u64 + 2)
    }

    pub fn to_file(&self, path: &Path) -> Result<()> {
        io::write_byte_buffer(path, self.config.d_p() as u32, &self.bytes, &self.lengths)
    }

    /// The file format carries no z-norm flag (bytes are normalization-
    /// agnostic), so the caller states which codec the buffer will feed.
    pub fn from_file(path: &Path, apply_znorm: bool) -> Result<ByteBuffer> {
        let b = io::read_byte_buffer(path)?;
        let bad = |reason: String| Error::FileFormat { path: path.display().to_string(), reason };
        let d_p = b.d_p as usize;
        for (i, &len) in b.lengths.iter().enumerate() {
            if len < 1 {
                return Err(bad(format!("row {i} has non-positive length {len}")));
            }
            if b.rows[i * d_p + len as usize..(i + 1) * d_p].iter().any(|&x| x != 0) {
                return Err(bad(format!("row {i} has nonzero padding past its length")));
            }
        }
        let config = CodecConfig::new(d_p)?.with_znorm(apply_znorm);
        Ok(ByteBuffer { config, bytes: b.rows, lengths: b.lengths })
    }
}

/// Per-token truncated byte slices, shared by both builders.
/// Errors name the first token whose bytes truncate to nothing.
fn plan_rows<'a>(
    vocab: &'a Vocabulary,
    config: &CodecConfig,
) -> Result<(Vec<&'a [u8]>, Vec<u32>)> {
    let d_p = config.d_p();
    let mut slices = Vec::with_capacity(vocab.len());
    let mut truncated = Vec::new();
    for r in vocab.records() {
        let t = truncate_utf8_safe(&r.bytes, d_p);
        if t.is_empty() {
            return Err(Error::TokenTruncatedEmpty { id: r.token_id, byte_len: r.bytes.len() });
        }
        if t.len() < r.bytes.len() {
            truncated.push(r.token_id);
        }
        slices.push(t);
    }
    Ok((slices, truncated))
}

fn fill_table(slices: &[&[u8]], config: &CodecConfig, data: &mut [f32], parallel: bool) -> Result<()> {
    let d = config.dim();
    let fill = |(slice, out): (&&[u8], &mut [f32])| -> Result<()> {
        let v = encode(slice, config)?;
        fill_row_f32(&v, config.apply_znorm(), out)
    };
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        return slices.par_iter().zip(data.par_chunks_mut(d)).map(fill).collect();
    }
    let _ = parallel;
    slices.iter().zip(data.chunks_mut(d)).try_for_each(fill)
}

fn build_table_impl(vocab: &Vocabulary, config: &CodecConfig, parallel: bool) -> Result<CodecTable> {
    let (slices, truncated_ids) = plan_rows(vocab, config)?;
    let mut rows = Matrix::zeros(vocab.len(), config.dim());
    fill_table(&slices, config, rows.data_mut(), parallel)?;
    Ok(CodecTable { config: *config, rows, truncated_ids })
}

/// Materialize the full V×D table (parallel across rows when the
/// `parallel` feature is enabled).
pub fn build_table(vocab: &Vocabulary, config: &CodecConfig) -> Result<CodecTable> {
    build_table_impl(vocab, config, true)
}

/// Sequential reference builder; bit-identical to [`build_table`].
pub fn build_table_serial(vocab: &Vocabulary, config: &CodecConfig) -> Result<CodecTable> {
    build_table_impl(vocab, config, false)
}

/// Pack the truncated token bytes and lengths.
pub fn build_byte_buffer(vocab: &Vocabulary, config: &CodecConfig) -> Result<ByteBuffer> {
    let d_p = config.d_p();
    if d_p > i16::MAX as usize {
        return Err(Error::InvalidArg(format!("d_p {d_p} exceeds the i16 length field")));
    }
    let (slices, _) = plan_rows(vocab, config)?;
    let mut bytes = vec![0u8; vocab.len() * d_p];
    let mut lengths = Vec::with_capacity(vocab.len());
    for (i, slice) in slices.iter().enumerate() {
        bytes[i * d_p..i * d_p + slice.len()].copy_from_slice(slice);
        lengths.push(slice.len() as i16);
    }
    Ok(ByteBuffer { config: *config, bytes, lengths })
}

/// Gather: out row `j` is table row `ids[j]`. Duplicates allowed; empty
/// `ids` yields a 0×D matrix.
pub fn lookup(table: &CodecTable, ids: &[u32]) -> Result<Matrix> {
    let d = table.rows.cols();
    let mut out = Matrix::zeros(ids.len(), d);
    for (j, &id) in ids.iter().enumerate() {
        let src = table.row(id)?;
        out.row_mut(j).copy_from_slice(src);
    }
    Ok(out)
}

/// Reconstruct rows on the fly from the byte buffer. Bit-identical to
/// [`lookup`] on a table built with the same config.
pub fn compute_dynamic(buffer: &ByteBuffer, ids: &[u32]) -> Result<Matrix> {
    let v = buffer.vocab_size();
    if let Some(&id) = ids.iter().find(|&&id| id as usize >= v) {
        return Err(Error::IdOutOfRange { id, vocab_size: v });
    }
    let config = &buffer.config;
    let mut out = Matrix::zeros(ids.len(), config.dim());
    let fill = |(&id, row): (&u32, &mut [f32])| -> Result<()> {
        let vec = encode(buffer.token_bytes(id)?, config)?;
        fill_row_f32(&vec, config.apply_znorm(), row)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        ids.par_iter().zip(out.data_mut().par_chunks_mut(config.dim())).map(fill).collect::<Result<()>>().map(|()| out)
    }
    #[cfg(not(feature = "parallel"))]
    {
        ids.iter().zip(out.data_mut().chunks_mut(config.dim())).map(fill).collect::<Result<()>>().map(|()| out)
    }
}

/// Footprints of the two backends for a hypothetical deployment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct MemoryReport {
    pub table_bytes: u64,
    pub buffer_bytes: u64,
    pub savings_bytes: u64,
}

/// `table_bytes = V·D·scalar`, `buffer_bytes = V·(d_p+2)`, savings the
/// difference. `table_bytes_per_scalar` is 4 (f32) or 2 (bf16).
pub fn memory_report(
    v: usize,
    config: &CodecConfig,
    table_bytes_per_scalar: usize,
) -> Result<MemoryReport> {
    if v == 0 {
        return Err(Error::InvalidArg("vocab size must be positive".into()));
    }
    if table_bytes_per_scalar != 2 && table_bytes_per_scalar != 4 {
        return Err(Error::InvalidArg(format!(
            "bytes per scalar must be 2 or 4, got {table_bytes_per_scalar}"
        )));
    }
    let table_bytes = v as u64 * config.dim() as u64 * table_bytes_per_scalar as u64;
    let buffer_bytes = v as u64 * (config.d_p() as u64 + 2);
    Ok(MemoryReport { table_bytes, buffer_bytes, savings_bytes: table_bytes - buffer_bytes })
}
