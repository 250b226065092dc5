//! Byte-position Kronecker codec.
//!
//! Tokens are represented by where their bytes sit: byte value `b` at
//! position `p` selects one coordinate of a `256 * d_p`-dimensional space,
//! and a token's vector is the scaled sum of its byte-position one-hots.
//! The codec is tokenizer-independent (any vocabulary that can be reduced
//! to byte sequences works), needs no training, and admits two
//! operationally distinct but numerically identical runtime backends:
//! a precomputed dense table and an on-the-fly reconstruction from a
//! compact byte buffer.
//!
//! Modules:
//! - [`codec`]: the sparse encoder, cosine geometry, z-normalization
//! - [`vocab`]: vocabulary ingestion (byte-level BPE, SentencePiece, TSV)
//! - [`backend`]: table / byte-buffer backends and memory accounting
//! - [`projection`]: the learned projection into model space
//! - [`probes`]: retrieval, morphology and anisotropy measurements
//! - [`io`]: flat little-endian file formats for all artifacts

pub mod backend;
pub mod codec;
pub mod error;
pub mod io;
pub mod matrix;
pub mod probes;
pub mod projection;
pub mod vocab;

pub use error::{Error, Result};
