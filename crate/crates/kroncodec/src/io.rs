//! Little-endian binary files for persisted artifacts.
//!
//! Four flat formats, each identified by an ASCII magic string:
//!
//! - `KBT1` — materialized codec table (vocab rows × D), f32 or bf16 scalars
//! - `KBB1` — packed token byte buffer (vocab rows × d_p bytes + lengths)
//! - `KPJ1` — projection weights (D × d_model, f32) with their init seed
//! - `KEMB1` — trained embedding matrix (V × dim), f32 or bf16 scalars
//!
//! bf16 is storage-only: values are widened to f32 on load and all
//! arithmetic stays in f32/f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// On-disk scalar width for table/embedding payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scalar {
    F32,
    Bf16,
}

impl Scalar {
    /// The header code is the scalar's byte width.
    pub fn code(self) -> u8 {
        match self {
            Scalar::F32 => 4,
            Scalar::Bf16 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Scalar> {
        match code {
            4 => Some(Scalar::F32),
            2 => Some(Scalar::Bf16),
            _ => None,
        }
    }
}

/// Truncate f32 to bf16 (top 16 bits) with round-to-nearest-even.
pub fn f32_to_bf16(x: f32) -> u16 {
    let bits = x.to_bits();
    if x.is_nan() {
        // force a quiet NaN rather than letting rounding clear the payload
        return ((bits >> 16) as u16) | 0x0040;
    }
    let round = 0x7FFF + ((bits >> 16) & 1);
    (bits.wrapping_add(round) >> 16) as u16
}

pub fn bf16_to_f32(bits: u16) -> f32 {
    f32::from_bits((bits as u32) << 16)
}

// ==== header plumbing =============================================================

fn fmt_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::FileFormat { path: path.display().to_string(), reason: reason.into() }
}

struct Source<'a> {
    reader: BufReader<File>,
    path: &'a Path,
}

impl<'a> Source<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        Ok(Source { reader: BufReader::new(File::open(path)?), path })
    }

    fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.reader.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                fmt_err(self.path, "file truncated")
            } else {
                Error::Io(e)
            }
        })
    }

    fn magic(&mut self, expected: &[u8]) -> Result<()> {
        let mut buf = vec![0u8; expected.len()];
        self.exact(&mut buf)?;
        if buf != expected {
            return Err(fmt_err(
                self.path,
                format!("bad magic: expected {:?}", String::from_utf8_lossy(expected)),
            ));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.exact(&mut b)?;
        Ok(b[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    /// Read `n` scalars of the given width, widening to f32.
    fn scalars(&mut self, scalar: Scalar, n: usize) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(n);
        let width = scalar.code() as usize;
        let mut chunk = vec![0u8; 1 << 16];
        let mut remaining = n * width;
        while remaining > 0 {
            let take = remaining.min(chunk.len());
            self.exact(&mut chunk[..take])?;
            match scalar {
                Scalar::F32 => out.extend(
                    chunk[..take].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())),
                ),
                Scalar::Bf16 => out.extend(
                    chunk[..take]
                        .chunks_exact(2)
                        .map(|c| bf16_to_f32(u16::from_le_bytes(c.try_into().unwrap()))),
                ),
            }
            remaining -= take;
        }
        Ok(out)
    }

    fn finish(mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.reader.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(fmt_err(self.path, "trailing data after payload")),
        }
    }
}

fn write_scalars(w: &mut impl Write, scalar: Scalar, data: &[f32]) -> Result<()> {
    match scalar {
        Scalar::F32 => {
            for &x in data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Scalar::Bf16 => {
            for &x in data {
                w.write_all(&f32_to_bf16(x).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

// ==== KBT1: codec table ===========================================================

const TABLE_MAGIC: &[u8] = b"KBT1";
const TABLE_VERSION: u32 = 1;

/// A codec table as read from disk. `data` is V×D, always f32 in memory.
#[derive(Debug)]
pub struct TableFile {
    pub d_c: u32,
    pub d_p: u32,
    pub scalar: Scalar,
    pub apply_znorm: bool,
    pub data: Matrix,
}

/// Layout: magic `KBT1`, u32 version=1, u32 V, u32 d_c, u32 d_p,
/// u8 scalar code, u8 znorm flag, V·D scalars row-major.
pub fn write_table(
    path: &Path,
    d_c: u32,
    d_p: u32,
    scalar: Scalar,
    apply_znorm: bool,
    data: &Matrix,
) -> Result<()> {
    if data.cols() != d_c as usize * d_p as usize {
        return Err(Error::DimMismatch { expected: d_c as usize * d_p as usize, got: data.cols() });
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TABLE_MAGIC)?;
    w.write_all(&TABLE_VERSION.to_le_bytes())?;
    w.write_all(&(data.rows() as u32).to_le_bytes())?;
    w.write_all(&d_c.to_le_bytes())?;
    w.write_all(&d_p.to_le_bytes())?;
    w.write_all(&[scalar.code(), apply_znorm as u8])?;
    write_scalars(&mut w, scalar, data.data())?;
    w.flush()?;
    Ok(())
}

pub fn read_table(path: &Path) -> Result<TableFile> {
    let mut src = Source::open(path)?;
    src.magic(TABLE_MAGIC)?;
    let version = src.u32()?;
    if version != TABLE_VERSION {
        return Err(fmt_err(path, format!("unsupported table version {version}")));
    }
    let v = src.u32()? as usize;
    let d_c = src.u32()?;
    let d_p = src.u32()?;
    let scalar = Scalar::from_code(src.u8()?)
        .ok_or_else(|| fmt_err(path, "unknown scalar code"))?;
    let znorm = match src.u8()? {
        0 => false,
        1 => true,
        b => return Err(fmt_err(path, format!("bad znorm flag {b}"))),
    };
    let dim = (d_c as usize)
        .checked_mul(d_p as usize)
        .and_then(|d| d.checked_mul(v))
        .ok_or_else(|| fmt_err(path, "header dimensions overflow"))?;
    let data = src.scalars(scalar, dim)?;
    src.finish()?;
    Ok(TableFile {
        d_c,
        d_p,
        scalar,
        apply_znorm: znorm,
        data: Matrix::from_vec(v, d_c as usize * d_p as usize, data)?,
    })
}

// ==== KBB1: token byte buffer =====================================================

const BUFFER_MAGIC: &[u8] = b"KBB1";

/// A packed byte buffer as read from disk: `rows` is V·d_p bytes
/// (zero-padded rows), `lengths[i]` the live prefix of row `i`.
#[derive(Debug)]
pub struct ByteBufferFile {
    pub d_p: u32,
    pub rows: Vec<u8>,
    pub lengths: Vec<i16>,
}

/// Layout: magic `KBB1`, u32 V, u32 d_p, V·d_p raw bytes, V i16 lengths.
pub fn write_byte_buffer(path: &Path, d_p: u32, rows: &[u8], lengths: &[i16]) -> Result<()> {
    if rows.len() != lengths.len() * d_p as usize {
        return Err(Error::DimMismatch {
            expected: lengths.len() * d_p as usize,
            got: rows.len(),
        });
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(BUFFER_MAGIC)?;
    w.write_all(&(lengths.len() as u32).to_le_bytes())?;
    w.write_all(&d_p.to_le_bytes())?;
    w.write_all(rows)?;
    for &len in lengths {
        w.write_all(&len.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_byte_buffer(path: &Path) -> Result<ByteBufferFile> {
    let mut src = Source::open(path)?;
    src.magic(BUFFER_MAGIC)?;
    let v = src.u32()? as usize;
    let d_p = src.u32()?;
    let n_bytes = v
        .checked_mul(d_p as usize)
        .ok_or_else(|| fmt_err(path, "header dimensions overflow"))?;
    let mut rows = vec![0u8; n_bytes];
    src.exact(&mut rows)?;
    let mut lengths = Vec::with_capacity(v);
    let mut b = [0u8; 2];
    for _ in 0..v {
        src.exact(&mut b)?;
        lengths.push(i16::from_le_bytes(b));
    }
    src.finish()?;
    for (i, &len) in lengths.iter().enumerate() {
        if len < 0 || len as u32 > d_p {
            return Err(fmt_err(path, format!("row {i} length {len} outside 0..={d_p}")));
        }
    }
    Ok(ByteBufferFile { d_p, rows, lengths })
}

// ==== KPJ1: projection weights ====================================================

const PROJECTION_MAGIC: &[u8] = b"KPJ1";

#[derive(Debug)]
pub struct ProjectionFile {
    pub seed: u64,
    /// D × d_model.
    pub weights: Matrix,
}

/// Layout: magic `KPJ1`, u32 D, u32 d_model, u64 seed, f32 row-major.
pub fn write_projection(path: &Path, seed: u64, weights: &Matrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(PROJECTION_MAGIC)?;
    w.write_all(&(weights.rows() as u32).to_le_bytes())?;
    w.write_all(&(weights.cols() as u32).to_le_bytes())?;
    w.write_all(&seed.to_le_bytes())?;
    write_scalars(&mut w, Scalar::F32, weights.data())?;
    w.flush()?;
    Ok(())
}

pub fn read_projection(path: &Path) -> Result<ProjectionFile> {
    let mut src = Source::open(path)?;
    src.magic(PROJECTION_MAGIC)?;
    let d = src.u32()? as usize;
    let d_model = src.u32()? as usize;
    let seed = src.u64()?;
    let n = d
        .checked_mul(d_model)
        .ok_or_else(|| fmt_err(path, "header dimensions overflow"))?;
    let data = src.scalars(Scalar::F32, n)?;
    src.finish()?;
    Ok(ProjectionFile { seed, weights: Matrix::from_vec(d, d_model, data)? })
}

// ==== KEMB1: trained embedding matrix =============================================

const EMBEDDING_MAGIC: &[u8] = b"KEMB1";

#[derive(Debug)]
pub struct EmbeddingFile {
    pub scalar: Scalar,
    /// V × dim, always f32 in memory.
    pub data: Matrix,
}

/// Layout: magic `KEMB1`, u32 V, u32 dim, u8 scalar code, scalars row-major.
pub fn write_embedding(path: &Path, scalar: Scalar, data: &Matrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_all(&(data.rows() as u32).to_le_bytes())?;
    w.write_all(&(data.cols() as u32).to_le_bytes())?;
    w.write_all(&[scalar.code()])?;
    write_scalars(&mut w, scalar, data.data())?;
    w.flush()?;
    Ok(())
}

pub fn read_embedding(path: &Path) -> Result<EmbeddingFile> {
    let mut src = Source::open(path)?;
    src.magic(EMBEDDING_MAGIC)?;
    let v = src.u32()? as usize;
    let dim = src.u32()? as usize;
    let scalar = Scalar::from_code(src.u8()?)
        .ok_or_else(|| fmt_err(path, "unknown scalar code"))?;
    let n = v
        .checked_mul(dim)
        .ok_or_else(|| fmt_err(path, "header dimensions overflow"))?;
    let data = src.scalars(scalar, n)?;
    src.finish()?;
    Ok(EmbeddingFile { scalar, data: Matrix::from_vec(v, dim, data)? })
}
