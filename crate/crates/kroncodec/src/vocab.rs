//! Vocabulary ingestion: load tokenizer vocabularies from three file
//! layouts, decode each piece to the raw UTF-8 bytes it stands for, and
//! classify tokens as normal / special / byte-fallback.
//!
//! Two decoding families are supported on top of a literal layout:
//!
//! - **byte-level BPE**: pieces are spelled in a 256-codepoint printable
//!   alphabet; a fixed bijection maps each codepoint back to one byte
//!   (e.g. `Ġ` = U+0120 stands for the space byte 0x20).
//! - **SentencePiece**: `<0xNN>` pieces are single-byte fallbacks; the
//!   U+2581 marker stands for a space; everything else is literal text.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Piece strings treated as special tokens in addition to any
/// caller-supplied list.
pub const DEFAULT_SPECIALS: &[&str] = &["<s>", "</s>", "<pad>", "<unk>", "<|endoftext|>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Normal,
    Special,
    ByteFallback,
}

/// One vocabulary entry: the surface piece as stored, its decoded bytes,
/// and its classification.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenByteRecord {
    pub token_id: u32,
    pub piece: String,
    pub bytes: Vec<u8>,
    pub kind: TokenKind,
    /// Set by [`Vocabulary::annotate_truncation`] when `bytes` exceeds the
    /// codec's `d_p`.
    pub truncated_at: Option<u32>,
}

/// Piece-decoding family of a vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    ByteLevelBpe,
    SentencePiece,
    PlainTsv,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::ByteLevelBpe => "byte-level-bpe",
            Family::SentencePiece => "sentencepiece",
            Family::PlainTsv => "plain-tsv",
        };
        f.write_str(s)
    }
}

/// File layout of a vocabulary on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabFormat {
    /// JSON object mapping piece string to integer id.
    Gpt2Json,
    /// Combined tokenizer config: `model.vocab` map plus `added_tokens`.
    TokenizerJson,
    /// `<id><TAB><piece>` lines; `#` comments ignored; pieces literal.
    Tsv,
    /// Sniff the layout from the file contents.
    Auto,
}

/// A dense, immutable vocabulary: record `i` has token id `i`.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    name: String,
    family: Family,
    records: Vec<TokenByteRecord>,
    by_piece: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn records(&self) -> &[TokenByteRecord] {
        &self.records
    }

    pub fn get(&self, id: u32) -> Result<&TokenByteRecord> {
        self.records
            .get(id as usize)
            .ok_or(Error::IdOutOfRange { id, vocab_size: self.records.len() })
    }

    /// Exact piece-string lookup.
    pub fn find_piece(&self, piece: &str) -> Option<u32> {
        self.by_piece.get(piece).copied()
    }

    /// Record which tokens a codec at this `d_p` would truncate.
    /// Returns how many were marked.
    pub fn annotate_truncation(&mut self, d_p: usize) -> usize {
        let mut n = 0;
        for r in &mut self.records {
            if r.bytes.len() > d_p {
                r.truncated_at = Some(d_p as u32);
                n += 1;
            } else {
                r.truncated_at = None;
            }
        }
        n
    }

    /// Serialize as TSV (`id<TAB>piece` per line). Loading the output as
    /// [`VocabFormat::Tsv`] reproduces a TSV-sourced vocabulary exactly;
    /// marker-decoded families lose their family on the way through.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.token_id.to_string());
            out.push('\t');
            out.push_str(&r.piece);
            out.push('\n');
        }
        out
    }

    /// Assemble from records produced by one of the loaders: ids must be
    /// unique and dense in `0..V`.
    fn from_entries(
        name: String,
        family: Family,
        entries: Vec<(u32, String, Vec<u8>, TokenKind)>,
    ) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::VocabFormat("vocabulary is empty".into()));
        }
        let max_id = entries.iter().map(|e| e.0).max().unwrap();
        let v = max_id as usize + 1;
        let mut slots: Vec<Option<TokenByteRecord>> = vec![None; v];
        for (token_id, piece, bytes, kind) in entries {
            let slot = &mut slots[token_id as usize];
            if let Some(prev) = slot {
                if prev.piece != piece {
                    return Err(Error::DuplicateId {
                        id: token_id,
                        first: prev.piece.clone(),
                        second: piece,
                    });
                }
                continue;
            }
            if bytes.is_empty() {
                return Err(Error::EmptyPiece { id: token_id, piece });
            }
            *slot = Some(TokenByteRecord { token_id, piece, bytes, kind, truncated_at: None });
        }
        let missing = slots.iter().filter(|s| s.is_none()).count();
        if missing > 0 {
            let first_gap = slots.iter().position(|s| s.is_none()).unwrap() as u32;
            return Err(Error::IdGaps { missing, max_id, first_gap });
        }
        let records: Vec<TokenByteRecord> = slots.into_iter().map(|s| s.unwrap()).collect();
        let by_piece = records.iter().map(|r| (r.piece.clone(), r.token_id)).collect();
        Ok(Vocabulary { name, family, records, by_piece })
    }
}

// ==== byte-level BPE bijection ====================================================

/// The 256-entry byte↔codepoint bijection used by byte-level BPE
/// vocabularies: printable ASCII (0x21..=0x7E) and two Latin-1 ranges
/// (0xA1..=0xAC, 0xAE..=0xFF) map to themselves; the remaining 68 byte
/// values map, in increasing byte order, to U+0100, U+0101, ...
fn byte_to_char_table() -> &'static [char; 256] {
    static TABLE: OnceLock<[char; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = ['\0'; 256];
        let passthrough =
            |b: u8| (0x21..=0x7E).contains(&b) || (0xA1..=0xAC).contains(&b) || b >= 0xAE;
        let mut next = 0u32;
        for b in 0u16..256 {
            let b = b as u8;
            table[b as usize] = if passthrough(b) {
                b as char
            } else {
                let c = char::from_u32(0x100 + next).unwrap();
                next += 1;
                c
            };
        }
        table
    })
}

fn char_to_byte_map() -> &'static HashMap<char, u8> {
    static MAP: OnceLock<HashMap<char, u8>> = OnceLock::new();
    MAP.get_or_init(|| {
        byte_to_char_table().iter().enumerate().map(|(b, &c)| (c, b as u8)).collect()
    })
}

/// Spell raw bytes in the byte-level-BPE printable alphabet.
pub fn encode_bytelevel_bpe(bytes: &[u8]) -> String {
    let table = byte_to_char_table();
    bytes.iter().map(|&b| table[b as usize]).collect()
}

/// Recover raw bytes from a piece spelled in the byte-level-BPE alphabet.
pub fn decode_bytelevel_bpe(piece: &str) -> Result<Vec<u8>> {
    let map = char_to_byte_map();
    piece
        .chars()
        .map(|c| {
            map.get(&c).copied().ok_or_else(|| Error::UnmappedCodepoint {
                codepoint: c as u32,
                piece: piece.to_string(),
            })
        })
        .collect()
}

// ==== SentencePiece decoding ======================================================

/// `<0xNN>` with NN two uppercase hex digits → the single byte NN.
fn byte_fallback_value(piece: &str) -> Option<u8> {
    let b = piece.as_bytes();
    if b.len() != 6 || !piece.starts_with("<0x") || b[5] != b'>' {
        return None;
    }
    let hex = |c: u8| match c {
        b'0'..=b'9' => Some(c - b'0'),
        b'A'..=b'F' => Some(c - b'A' + 10),
        _ => None,
    };
    Some(hex(b[3])? * 16 + hex(b[4])?)
}

/// Decode a SentencePiece piece: byte-fallback pieces yield their single
/// byte; otherwise every U+2581 marker becomes a space byte and the rest
/// is literal UTF-8.
pub fn decode_sentencepiece(piece: &str) -> (Vec<u8>, TokenKind) {
    if let Some(b) = byte_fallback_value(piece) {
        return (vec![b], TokenKind::ByteFallback);
    }
    let text = piece.replace('\u{2581}', " ");
    (text.into_bytes(), TokenKind::Normal)
}

// ==== loading =====================================================================

/// Load a vocabulary. `extra_specials` is merged with [`DEFAULT_SPECIALS`];
/// special pieces keep their literal UTF-8 bytes regardless of family.
pub fn load_vocab(
    path: &Path,
    format: VocabFormat,
    extra_specials: Option<&[String]>,
) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "vocab".into());
    let mut specials: Vec<String> = DEFAULT_SPECIALS.iter().map(|s| s.to_string()).collect();
    if let Some(extra) = extra_specials {
        specials.extend(extra.iter().cloned());
    }
    load_vocab_str(&text, format, &specials, name)
}

fn load_vocab_str(
    text: &str,
    format: VocabFormat,
    specials: &[String],
    name: String,
) -> Result<Vocabulary> {
    let format = match format {
        VocabFormat::Auto => sniff_format(text),
        f => f,
    };
    match format {
        VocabFormat::Gpt2Json => load_gpt2_json(text, specials, name),
        VocabFormat::TokenizerJson => load_tokenizer_json(text, specials, name),
        VocabFormat::Tsv => load_tsv(text, specials, name),
        VocabFormat::Auto => unreachable!(),
    }
}

fn sniff_format(text: &str) -> VocabFormat {
    let trimmed = text.trim_start();
    if !trimmed.starts_with('{') {
        return VocabFormat::Tsv;
    }
    match serde_json::from_str::<serde_json::Value>(trimmed) {
        Ok(v) if v.get("model").and_then(|m| m.get("vocab")).is_some() => {
            VocabFormat::TokenizerJson
        }
        Ok(_) => VocabFormat::Gpt2Json,
        Err(_) => VocabFormat::Tsv,
    }
}

fn piece_id_map(value: &serde_json::Value, context: &str) -> Result<Vec<(String, u32)>> {
    let obj = value
        .as_object()
        .ok_or_else(|| Error::VocabFormat(format!("{context} is not a JSON object")))?;
    let mut out = Vec::with_capacity(obj.len());
    for (piece, id) in obj {
        let id = id
            .as_u64()
            .ok_or_else(|| Error::VocabFormat(format!("id for piece {piece:?} is not a non-negative integer")))?;
        let id = u32::try_from(id)
            .map_err(|_| Error::VocabFormat(format!("id {id} for piece {piece:?} exceeds u32")))?;
        out.push((piece.clone(), id));
    }
    Ok(out)
}

fn load_gpt2_json(text: &str, specials: &[String], name: String) -> Result<Vocabulary> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let pairs = piece_id_map(&value, "vocabulary")?;
    let entries = pairs
        .into_iter()
        .map(|(piece, id)| {
            let (bytes, kind) = if specials.iter().any(|s| s == &piece) {
                (piece.clone().into_bytes(), TokenKind::Special)
            } else {
                (decode_bytelevel_bpe(&piece)?, TokenKind::Normal)
            };
            Ok((id, piece, bytes, kind))
        })
        .collect::<Result<Vec<_>>>()?;
    Vocabulary::from_entries(name, Family::ByteLevelBpe, entries)
}

/// Family detection for combined tokenizer configs: SentencePiece markers
/// win, then byte-level remapped codepoints; a vocabulary with neither
/// decodes as SentencePiece, which is the identity on marker-free text.
fn detect_family<'a>(pieces: impl Iterator<Item = &'a str>) -> Family {
    let mut saw_bytelevel = false;
    for piece in pieces {
        if piece.contains('\u{2581}') || byte_fallback_value(piece).is_some() {
            return Family::SentencePiece;
        }
        if piece.chars().any(|c| ('\u{0100}'..='\u{0143}').contains(&c)) {
            saw_bytelevel = true;
        }
    }
    if saw_bytelevel {
        Family::ByteLevelBpe
    } else {
        Family::SentencePiece
    }
}

fn load_tokenizer_json(text: &str, specials: &[String], name: String) -> Result<Vocabulary> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let vocab = value
        .get("model")
        .and_then(|m| m.get("vocab"))
        .ok_or_else(|| Error::VocabFormat("missing model.vocab".into()))?;
    let pairs = piece_id_map(vocab, "model.vocab")?;

    let mut added_special: HashMap<String, u32> = HashMap::new();
    let mut added_normal: Vec<(String, u32)> = Vec::new();
    if let Some(added) = value.get("added_tokens").and_then(|a| a.as_array()) {
        for tok in added {
            let content = tok
                .get("content")
                .and_then(|c| c.as_str())
                .ok_or_else(|| Error::VocabFormat("added_tokens entry missing content".into()))?;
            let id = tok
                .get("id")
                .and_then(|i| i.as_u64())
                .ok_or_else(|| Error::VocabFormat("added_tokens entry missing id".into()))?;
            let id = u32::try_from(id)
                .map_err(|_| Error::VocabFormat(format!("added token id {id} exceeds u32")))?;
            if tok.get("special").and_then(|s| s.as_bool()).unwrap_or(false) {
                added_special.insert(content.to_string(), id);
            } else {
                added_normal.push((content.to_string(), id));
            }
        }
    }

    let family = detect_family(
        pairs
            .iter()
            .map(|(p, _)| p.as_str())
            .filter(|p| !added_special.contains_key(*p) && !specials.iter().any(|s| s == p)),
    );
    let decode = |piece: &str| -> Result<(Vec<u8>, TokenKind)> {
        match family {
            Family::ByteLevelBpe => Ok((decode_bytelevel_bpe(piece)?, TokenKind::Normal)),
            _ => Ok(decode_sentencepiece(piece)),
        }
    };

    let mut entries = Vec::with_capacity(pairs.len() + added_normal.len());
    for (piece, id) in pairs {
        let (bytes, kind) = if added_special.contains_key(&piece) || specials.iter().any(|s| s == &piece)
        {
            (piece.clone().into_bytes(), TokenKind::Special)
        } else {
            decode(&piece)?
        };
        entries.push((id, piece, bytes, kind));
    }
    for (piece, id) in added_normal {
        let (bytes, kind) = decode(&piece)?;
        entries.push((id, piece, bytes, kind));
    }
    for (piece, id) in added_special {
        entries.push((id, piece.clone(), piece.into_bytes(), TokenKind::Special));
    }
    Vocabulary::from_entries(name, family, entries)
}

fn load_tsv(text: &str, specials: &[String], name: String) -> Result<Vocabulary> {
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id_str, piece) = line.split_once('\t').ok_or_else(|| {
            Error::VocabFormat(format!("line {}: expected <id><TAB><piece>", lineno + 1))
        })?;
        let id: u32 = id_str.trim().parse().map_err(|_| {
            Error::VocabFormat(format!("line {}: bad id {id_str:?}", lineno + 1))
        })?;
        let kind = if specials.iter().any(|s| s == piece) {
            TokenKind::Special
        } else {
            TokenKind::Normal
        };
        entries.push((id, piece.to_string(), piece.as_bytes().to_vec(), kind));
    }
    Vocabulary::from_entries(name, Family::PlainTsv, entries)
}

// ==== coverage ====================================================================

/// Fraction of Normal + ByteFallback tokens whose decoded byte length is
/// at most `d_p`, per requested `d_p`. Special tokens are excluded from
/// both numerator and denominator.
pub fn coverage_stats(vocab: &Vocabulary, dp_values: &[usize]) -> Result<Vec<f64>> {
    let lengths: Vec<usize> = vocab
        .records()
        .iter()
        .filter(|r| r.kind != TokenKind::Special)
        .map(|r| r.bytes.len())
        .collect();
    if lengths.is_empty() {
        return Err(Error::InvalidArg(
            "coverage is undefined for a vocabulary of only special tokens".into(),
        ));
    }
    Ok(dp_values
        .iter()
        .map(|&dp| lengths.iter().filter(|&&l| l <= dp).count() as f64 / lengths.len() as f64)
        .collect())
}
