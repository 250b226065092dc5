//! The byte-position codec.
//!
//! A token's byte sequence `b_1..b_L` (UTF-8-safely truncated to at most
//! `d_p` bytes) becomes a sparse vector in a `D = 256 * d_p`-dimensional
//! space: byte value `b` at position `p` selects the single coordinate
//! `b * d_p + p`, and every selected coordinate carries `1/sqrt(L)`. The
//! construction is the flattened sum of Kronecker products of a byte
//! one-hot with a position one-hot, so distinct positions never collide
//! and the raw vector has unit L2 norm.
//!
//! Cosine geometry falls out analytically: two equal-length strings
//! differing in `k` byte positions have raw cosine `(L-k)/L`, and strings
//! sharing no (byte, position) pair — e.g. a word and its uppercase — are
//! exactly orthogonal.

use crate::error::{Error, Result};

/// Byte-axis dimension; the alphabet of one byte is always 256 values.
pub const BYTE_DIM: usize = 256;

/// Codec geometry (`d_p` byte positions, `D = 256 * d_p` coordinates)
/// plus the z-normalization switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecConfig {
    d_p: usize,
    apply_znorm: bool,
}

impl CodecConfig {
    /// `d_p` must be at least 1. Z-normalization defaults to on.
    pub fn new(d_p: usize) -> Result<Self> {
        if d_p == 0 {
            return Err(Error::InvalidConfig);
        }
        Ok(CodecConfig { d_p, apply_znorm: true })
    }

    pub fn with_znorm(mut self, apply: bool) -> Self {
        self.apply_znorm = apply;
        self
    }

    pub fn d_p(&self) -> usize {
        self.d_p
    }

    /// Total codec dimension `D = 256 * d_p`.
    pub fn dim(&self) -> usize {
        BYTE_DIM * self.d_p
    }

    pub fn apply_znorm(&self) -> bool {
        self.apply_znorm
    }
}

impl Default for CodecConfig {
    /// The production configuration: `d_p = 32`, z-normalization on.
    fn default() -> Self {
        CodecConfig { d_p: 32, apply_znorm: true }
    }
}

/// Sparse codec vector: index-sorted `(coordinate, value)` pairs.
///
/// Invariants: at most `d_p` entries, strictly ascending indices, every
/// value equal to `1/sqrt(nnz)`, unit L2 norm (pre-z-norm).
#[derive(Debug, Clone, PartialEq)]
pub struct CodecVector {
    dim: usize,
    entries: Vec<(u32, f64)>,
}

impl CodecVector {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i as usize] = v;
        }
        out
    }
}

/// Coordinate of byte value `byte` at position `pos`: `byte * d_p + pos`.
pub fn linear_index(byte: u8, pos: usize, config: &CodecConfig) -> Result<usize> {
    if pos >= config.d_p {
        return Err(Error::PositionOutOfRange { pos, d_p: config.d_p });
    }
    Ok(byte as usize * config.d_p + pos)
}

/// Truncate to at most `d_p` bytes without splitting a codepoint.
///
/// Valid UTF-8 input backs off to the last complete codepoint boundary at
/// or before `d_p`. Input that is not valid UTF-8 (byte-fallback
/// reconstructions are already sub-codepoint) is cut at raw byte `d_p`.
pub fn truncate_utf8_safe(bytes: &[u8], d_p: usize) -> &[u8] {
    if bytes.len() <= d_p {
        return bytes;
    }
    if std::str::from_utf8(bytes).is_err() {
        return &bytes[..d_p];
    }
    let mut end = d_p;
    // 0b10xxxxxx bytes are UTF-8 continuations; a boundary is anything else.
    while end > 0 && bytes[end] & 0xC0 == 0x80 {
        end -= 1;
    }
    &bytes[..end]
}

/// Encode a byte sequence into its sparse codec vector.
///
/// Applies [`truncate_utf8_safe`] first; with `L` the post-truncation
/// length, the result has exactly `L` entries of value `1/sqrt(L)`.
/// Z-normalization is *not* applied here — see [`z_normalize`].
pub fn encode(bytes: &[u8], config: &CodecConfig) -> Result<CodecVector> {
    let kept = truncate_utf8_safe(bytes, config.d_p);
    let l = kept.len();
    if l == 0 {
        return Err(Error::EmptyToken { byte_len: bytes.len() });
    }
    let value = 1.0 / (l as f64).sqrt();
    let mut entries: Vec<(u32, f64)> = kept
        .iter()
        .enumerate()
        // pos < L <= d_p, so the index formula cannot go out of range
        .map(|(pos, &b)| ((b as usize * config.d_p + pos) as u32, value))
        .collect();
    entries.sort_unstable_by_key(|&(i, _)| i);
    Ok(CodecVector { dim: config.dim(), entries })
}

/// Cosine similarity of the *raw* (pre-z-norm) codec vectors of `a` and `b`.
///
/// Equal-length strings differing in `k` positions score `(L-k)/L`;
/// in general the score is `|shared (byte, pos) pairs| / sqrt(L1 * L2)`.
pub fn codec_cosine(a: &[u8], b: &[u8], config: &CodecConfig) -> Result<f64> {
    let ta = truncate_utf8_safe(a, config.d_p);
    let tb = truncate_utf8_safe(b, config.d_p);
    if ta.is_empty() {
        return Err(Error::EmptyToken { byte_len: a.len() });
    }
    if tb.is_empty() {
        return Err(Error::EmptyToken { byte_len: b.len() });
    }
    let shared = ta.iter().zip(tb.iter()).filter(|(x, y)| x == y).count();
    Ok(shared as f64 / ((ta.len() as f64) * (tb.len() as f64)).sqrt())
}

/// Per-vector z-norm statistics over all `D` coordinates, computed from
/// the sparse entries (the `D - L` implicit zeros contribute nothing to
/// the sums). Population variance, divisor `D`.
///
/// Both runtime backends route through this exact computation so their
/// outputs agree bit-for-bit after the final f32 rounding.
pub(crate) fn znorm_stats(v: &CodecVector) -> Result<(f64, f64)> {
    let d = v.dim as f64;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for &(_, val) in &v.entries {
        sum += val;
        sumsq += val * val;
    }
    let mean = sum / d;
    let var = sumsq / d - mean * mean;
    if var <= 0.0 || !var.is_finite() {
        return Err(Error::DegenerateStd);
    }
    Ok((mean, var.sqrt()))
}

/// Densify and rescale to mean 0, standard deviation 1 across the `D`
/// coordinates (population std, divisor `D`).
pub fn z_normalize(v: &CodecVector) -> Result<Vec<f64>> {
    if v.entries.is_empty() {
        return Err(Error::DegenerateStd);
    }
    let (mean, std) = znorm_stats(v)?;
    let background = -mean / std;
    let mut out = vec![background; v.dim];
    for &(i, val) in &v.entries {
        out[i as usize] = (val - mean) / std;
    }
    Ok(out)
}

/// Materialize a codec vector into an f32 row, z-normalized or raw.
///
/// This is the single rounding point shared by the table and dynamic
/// backends; routing both through it is what makes them elementwise
/// identical.
pub(crate) fn fill_row_f32(v: &CodecVector, apply_znorm: bool, out: &mut [f32]) -> Result<()> {
    if out.len() != v.dim {
        return Err(Error::DimMismatch { expected: v.dim, got: out.len() });
    }
    if apply_znorm {
        let (mean, std) = znorm_stats(v)?;
        let background = (-mean / std) as f32;
        out.fill(background);
        for &(i, val) in &v.entries {
            out[i as usize] = ((val - mean) / std) as f32;
        }
    } else {
        out.fill(0.0);
        for &(i, val) in &v.entries {
            out[i as usize] = val as f32;
        }
    }
    Ok(())
}
