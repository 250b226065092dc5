//! Measurement toolkit over embedding spaces: mean-centered cosine
//! retrieval, canonical-form morphology metrics, anisotropy diagnostics,
//! retrieval-overlap comparison across vocabularies, and a seeded
//! random-Gaussian baseline. Works over codec tables, trained embedding
//! files, and synthetic matrices alike.

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::backend::CodecTable;
use crate::codec::{encode, z_normalize, CodecConfig};
use crate::error::{Error, Result};
use crate::io::{self, Scalar};
use crate::matrix::Matrix;
use crate::vocab::Vocabulary;

/// Where an embedding matrix came from; carried through reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    KroneckerCodec,
    TrainedExternal,
    RandomGaussian,
}

/// V×dim matrix of finite reals plus its provenance tag.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    rows: Matrix,
    source: EmbeddingSource,
}

impl EmbeddingMatrix {
    pub fn new(rows: Matrix, source: EmbeddingSource) -> Result<Self> {
        if !rows.data().iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidArg("embedding matrix has non-finite entries".into()));
        }
        Ok(EmbeddingMatrix { rows, source })
    }

    pub fn from_codec_table(table: &CodecTable) -> Self {
        // codec rows are finite by construction
        EmbeddingMatrix { rows: table.matrix().clone(), source: EmbeddingSource::KroneckerCodec }
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.rows
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }

    pub fn to_file(&self, path: &Path, scalar: Scalar) -> Result<()> {
        io::write_embedding(path, scalar, &self.rows)
    }

    /// Load a trained embedding matrix (rejects non-finite entries).
    pub fn from_file(path: &Path) -> Result<Self> {
        let e = io::read_embedding(path)?;
        EmbeddingMatrix::new(e.data, EmbeddingSource::TrainedExternal)
    }
}

/// Deterministic i.i.d. standard-Gaussian matrix — the chance-retrieval
/// baseline.
pub fn random_baseline(v: usize, dim: usize, seed: u64) -> Result<EmbeddingMatrix> {
    if v == 0 || dim == 0 {
        return Err(Error::InvalidArg("baseline dims must be positive".into()));
    }
    let n = v
        .checked_mul(dim)
        .ok_or_else(|| Error::InvalidArg("baseline dims overflow".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> =
        (0..n).map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng) as f32).collect();
    Ok(EmbeddingMatrix {
        rows: Matrix::from_vec(v, dim, data)?,
        source: EmbeddingSource::RandomGaussian,
    })
}

fn center_rows(m: &Matrix) -> (Matrix, Vec<f64>) {
    let (v, d) = (m.rows(), m.cols());
    let mut mean = vec![0f64; d];
    if v == 0 {
        return (Matrix::zeros(0, d), mean);
    }
    for row in m.iter_rows() {
        for (s, &x) in mean.iter_mut().zip(row) {
            *s += x as f64;
        }
    }
    for s in &mut mean {
        *s /= v as f64;
    }
    let mut out = Matrix::zeros(v, d);
    for i in 0..v {
        let src = m.row(i);
        let dst = out.row_mut(i);
        for j in 0..d {
            dst[j] = (src[j] as f64 - mean[j]) as f32;
        }
    }
    (out, mean)
}

/// Subtract the row-mean across the vocabulary from every row.
pub fn mean_center(e: &EmbeddingMatrix) -> EmbeddingMatrix {
    let (rows, _) = center_rows(&e.rows);
    EmbeddingMatrix { rows, source: e.source }
}

/// A retrieval-ready space: the mean-centered matrix together with the
/// mean that was subtracted (so fresh codec-encoded queries can enter
/// the same space) and, for codec-backed spaces, the codec config.
#[derive(Debug, Clone)]
pub struct ProbeSpace {
    centered: EmbeddingMatrix,
    mean: Vec<f64>,
    config: Option<CodecConfig>,
}

impl ProbeSpace {
    pub fn from_embedding(e: &EmbeddingMatrix) -> ProbeSpace {
        let (rows, mean) = center_rows(&e.rows);
        ProbeSpace {
            centered: EmbeddingMatrix { rows, source: e.source },
            mean,
            config: None,
        }
    }

    pub fn from_codec_table(table: &CodecTable) -> ProbeSpace {
        let (rows, mean) = center_rows(table.matrix());
        ProbeSpace {
            centered: EmbeddingMatrix { rows, source: EmbeddingSource::KroneckerCodec },
            mean,
            config: Some(*table.config()),
        }
    }

    pub fn centered(&self) -> &EmbeddingMatrix {
        &self.centered
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn codec_config(&self) -> Option<&CodecConfig> {
        self.config.as_ref()
    }
}

/// One retrieval result.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct NeighborHit {
    pub token_id: u32,
    pub piece: String,
    pub cosine: f64,
    pub canonical: String,
}

impl NeighborHit {
    pub fn new(token_id: u32, piece: impl Into<String>, cosine: f64) -> Self {
        let piece = piece.into();
        let canonical = canonical_form(&piece);
        NeighborHit { token_id, piece, cosine, canonical }
    }
}

/// Core scan: ids and cosines of the top-k non-excluded rows, ordered by
/// descending cosine with ties broken by ascending token id. Zero-norm
/// rows are skipped (a warning reports how many).
pub fn nearest_ids(
    space: &ProbeSpace,
    query: &[f64],
    k: usize,
    exclude: &[u32],
) -> Result<Vec<(u32, f64)>> {
    let m = space.centered.matrix();
    if m.rows() < 2 {
        return Err(Error::InvalidArg("retrieval needs at least 2 rows".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArg("k must be at least 1".into()));
    }
    if query.len() != m.cols() {
        return Err(Error::DimMismatch { expected: m.cols(), got: query.len() });
    }
    let qnorm = query.iter().map(|x| x * x).sum::<f64>().sqrt();
    if qnorm == 0.0 {
        return Err(Error::ZeroNormQuery);
    }
    let excluded: HashSet<u32> = exclude.iter().copied().collect();

    // cosine per row, or the reason the row is out
    let score = |(i, row): (usize, &[f32])| -> std::result::Result<(u32, f64), bool> {
        let id = i as u32;
        if excluded.contains(&id) {
            return Err(false);
        }
        let mut dot = 0f64;
        let mut n2 = 0f64;
        for (&x, q) in row.iter().zip(query) {
            let x = x as f64;
            dot += x * q;
            n2 += x * x;
        }
        if n2 == 0.0 {
            return Err(true); // zero-norm row
        }
        Ok((id, dot / (qnorm * n2.sqrt())))
    };

    #[cfg(feature = "parallel")]
    let scored: Vec<std::result::Result<(u32, f64), bool>> = {
        use rayon::prelude::*;
        m.data().par_chunks(m.cols()).enumerate().map(score).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let scored: Vec<std::result::Result<(u32, f64), bool>> =
        m.data().chunks(m.cols()).enumerate().map(score).collect();

    let zero_rows = scored.iter().filter(|s| matches!(s, Err(true))).count();
    if zero_rows > 0 {
        log::warn!("retrieval skipped {zero_rows} zero-norm rows");
    }
    let mut candidates: Vec<(u32, f64)> = scored.into_iter().flatten().collect();
    candidates.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    candidates.truncate(k);
    Ok(candidates)
}

/// [`nearest_ids`] decorated with pieces and canonical forms. Without a
/// vocabulary, the decimal token id stands in for the piece.
pub fn top_k_neighbors(
    space: &ProbeSpace,
    query: &[f64],
    k: usize,
    exclude: &[u32],
    vocab: Option<&Vocabulary>,
) -> Result<Vec<NeighborHit>> {
    nearest_ids(space, query, k, exclude)?
        .into_iter()
        .map(|(id, cosine)| {
            let piece = match vocab {
                Some(v) => v.get(id)?.piece.clone(),
                None => id.to_string(),
            };
            Ok(NeighborHit::new(id, piece, cosine))
        })
        .collect()
}

/// How a probe string becomes a query vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryMode {
    /// Encode the probe's bytes through the codec (codec spaces only).
    /// Works for strings no vocabulary contains.
    CodecEncode,
    /// Look the probe up as a vocabulary piece, trying marker-prefixed
    /// variants; the matched row is the query.
    ExactPiece,
    /// Mean of the given rows.
    ExplicitIds(Vec<u32>),
}

/// A query vector in a [`ProbeSpace`], plus the vocabulary rows it came
/// from (excluded from "non-self" retrieval; empty for encoded queries).
#[derive(Debug, Clone)]
pub struct Query {
    pub vector: Vec<f64>,
    pub self_ids: Vec<u32>,
}

fn centered_row_f64(space: &ProbeSpace, id: u32) -> Result<Vec<f64>> {
    let m = space.centered.matrix();
    if id as usize >= m.rows() {
        return Err(Error::IdOutOfRange { id, vocab_size: m.rows() });
    }
    Ok(m.row(id as usize).iter().map(|&x| x as f64).collect())
}

pub fn make_query(
    probe: &str,
    space: &ProbeSpace,
    vocab: Option<&Vocabulary>,
    mode: &QueryMode,
) -> Result<Query> {
    match mode {
        QueryMode::CodecEncode => {
            let config = space.config.as_ref().ok_or(Error::QueryModeMismatch)?;
            let v = encode(probe.as_bytes(), config)?;
            let dense = if config.apply_znorm() { z_normalize(&v)? } else { v.to_dense() };
            let vector = dense.iter().zip(&space.mean).map(|(x, m)| x - m).collect();
            Ok(Query { vector, self_ids: Vec::new() })
        }
        QueryMode::ExactPiece => {
            let vocab = vocab
                .ok_or_else(|| Error::InvalidArg("exact-piece lookup needs a vocabulary".into()))?;
            let variants =
                [probe.to_string(), format!(" {probe}"), format!("Ġ{probe}"), format!("▁{probe}")];
            for piece in &variants {
                if let Some(id) = vocab.find_piece(piece) {
                    return Ok(Query { vector: centered_row_f64(space, id)?, self_ids: vec![id] });
                }
            }
            Err(Error::PieceNotFound { tried: variants.to_vec() })
        }
        QueryMode::ExplicitIds(ids) => {
            if ids.is_empty() {
                return Err(Error::InvalidArg("explicit-id query needs at least one id".into()));
            }
            let dim = space.centered.dim();
            let mut acc = vec![0f64; dim];
            for &id in ids {
                for (a, x) in acc.iter_mut().zip(centered_row_f64(space, id)?) {
                    *a += x;
                }
            }
            for a in &mut acc {
                *a /= ids.len() as f64;
            }
            Ok(Query { vector: acc, self_ids: ids.clone() })
        }
    }
}

// ==== canonical form and morph metrics ============================================

const STRIP_SET: &[char] = &[
    ' ', '\t', '\n', '\r', '.', ',', ';', ':', '!', '?', '"', '\'', '`', '(', ')', '[', ']',
    '{', '}', '_', '-', '/', '\\', '<', '>',
];

/// Three steps: space markers (U+2581, U+0120) become spaces everywhere,
/// whitespace and punctuation are trimmed from both ends only, and the
/// remainder is Unicode-casefolded.
pub fn canonical_form(s: &str) -> String {
    let replaced = s.replace(['\u{2581}', '\u{0120}'], " ");
    let trimmed = replaced.trim_matches(|c| STRIP_SET.contains(&c));
    caseless::default_case_fold_str(trimmed)
}

/// Fraction of hits whose canonical form differs from the probe's —
/// escape from typographic clustering.
pub fn loose_morph_at_k(probe: &str, hits: &[NeighborHit]) -> Result<f64> {
    if hits.is_empty() {
        return Err(Error::InvalidArg("morph scores need at least one hit".into()));
    }
    let probe_canonical = canonical_form(probe);
    let differing = hits.iter().filter(|h| h.canonical != probe_canonical).count();
    Ok(differing as f64 / hits.len() as f64)
}

/// `strict`: fraction of hits whose canonical form is in the
/// canonicalized family list. `root_score`: fraction whose canonical form
/// contains the family root as a substring. The probe itself enters
/// neither score; it is accepted so call sites read uniformly with
/// [`loose_morph_at_k`].
pub fn strict_and_root_morph(
    _probe: &str,
    hits: &[NeighborHit],
    family: &[String],
    root: &str,
) -> Result<(f64, f64)> {
    if hits.is_empty() {
        return Err(Error::InvalidArg("morph scores need at least one hit".into()));
    }
    if family.is_empty() || root.is_empty() {
        return Err(Error::InvalidArg("strict morph needs a non-empty family and root".into()));
    }
    let family_set: HashSet<String> = family.iter().map(|s| canonical_form(s)).collect();
    let root = canonical_form(root);
    let strict = hits.iter().filter(|h| family_set.contains(&h.canonical)).count();
    let rooted = hits.iter().filter(|h| h.canonical.contains(&root)).count();
    Ok((strict as f64 / hits.len() as f64, rooted as f64 / hits.len() as f64))
}

/// One probe's retrieval plus its morph scores, ready for JSON-lines output.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MorphReport {
    pub probe: String,
    pub k: usize,
    pub hits: Vec<NeighborHit>,
    pub loose_score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strict_score: Option<f64>,
}

pub fn morph_report(
    probe: &str,
    hits: &[NeighborHit],
    family: Option<(&[String], &str)>,
) -> Result<MorphReport> {
    let loose_score = loose_morph_at_k(probe, hits)?;
    let (strict_score, root_score) = match family {
        Some((members, root)) => {
            let (s, r) = strict_and_root_morph(probe, hits, members, root)?;
            (Some(s), Some(r))
        }
        None => (None, None),
    };
    Ok(MorphReport {
        probe: probe.to_string(),
        k: hits.len(),
        hits: hits.to_vec(),
        loose_score,
        root_score,
        strict_score,
    })
}

// ==== anisotropy ==================================================================

/// Concentration diagnostics of an (uncentered) embedding matrix.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Anisotropy {
    /// L2 norm of the mean embedding vector — exact.
    pub mean_norm: f64,
    /// Mean cosine over sampled distinct row pairs.
    pub raw_mean_pairwise_cos: f64,
    /// Standard error of that estimate.
    pub stderr: f64,
    pub pair_samples: usize,
}

pub fn anisotropy(e: &EmbeddingMatrix, pair_samples: usize, seed: u64) -> Result<Anisotropy> {
    let m = e.matrix();
    let v = m.rows();
    if v < 2 {
        return Err(Error::InvalidArg("anisotropy needs at least 2 rows".into()));
    }
    if pair_samples == 0 {
        return Err(Error::InvalidArg("pair sample count must be positive".into()));
    }

    let d = m.cols();
    let mut mean = vec![0f64; d];
    for row in m.iter_rows() {
        for (s, &x) in mean.iter_mut().zip(row) {
            *s += x as f64;
        }
    }
    let mean_norm =
        mean.iter().map(|s| (s / v as f64).powi(2)).sum::<f64>().sqrt();

    let norms: Vec<f64> = (0..v)
        .map(|i| m.row(i).iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cosines = Vec::with_capacity(pair_samples);
    let mut attempts = 0usize;
    let max_attempts = pair_samples.saturating_mul(1000).max(1000);
    while cosines.len() < pair_samples {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::InvalidArg(
                "could not sample enough nonzero-norm row pairs".into(),
            ));
        }
        let i = rng.random_range(0..v);
        let j = rng.random_range(0..v);
        if i == j || norms[i] == 0.0 || norms[j] == 0.0 {
            continue;
        }
        let dot: f64 =
            m.row(i).iter().zip(m.row(j)).map(|(&a, &b)| a as f64 * b as f64).sum();
        cosines.push(dot / (norms[i] * norms[j]));
    }

    let n = cosines.len() as f64;
    let est = cosines.iter().sum::<f64>() / n;
    let stderr = if cosines.len() > 1 {
        let var = cosines.iter().map(|c| (c - est).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(Anisotropy { mean_norm, raw_mean_pairwise_cos: est, stderr, pair_samples })
}

// ==== retrieval overlap ===========================================================

/// Jaccard similarity of the canonical-form sets of the two top-k lists.
pub fn jaccard_canonical_topk(
    hits_a: &[NeighborHit],
    hits_b: &[NeighborHit],
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArg("k must be at least 1".into()));
    }
    if hits_a.len() < k || hits_b.len() < k {
        return Err(Error::InvalidArg(format!(
            "both hit lists must have at least k={k} entries (got {} and {})",
            hits_a.len(),
            hits_b.len()
        )));
    }
    let set_a: HashSet<&str> = hits_a[..k].iter().map(|h| h.canonical.as_str()).collect();
    let set_b: HashSet<&str> = hits_b[..k].iter().map(|h| h.canonical.as_str()).collect();
    let intersection = set_a.intersection(&set_b).count();
    let union = set_a.union(&set_b).count();
    if union == 0 {
        return Ok(1.0);
    }
    Ok(intersection as f64 / union as f64)
}

// ==== probe-family fixtures ==========================================================

/// One probe family: a shared root, the probe strings, and a curated
/// list of genuine morphological family members for the strict metric.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ProbeFamily {
    pub family: String,
    pub root: String,
    pub probes: Vec<String>,
    #[serde(default)]
    pub strict_family: Vec<String>,
}

pub fn load_probe_families(path: &Path) -> Result<Vec<ProbeFamily>> {
    let text = std::fs::read_to_string(path)?;
    let families: Vec<ProbeFamily> = serde_json::from_str(&text)?;
    for f in &families {
        if f.family.is_empty() || f.root.is_empty() || f.probes.is_empty() {
            return Err(Error::VocabFormat(format!(
                "probe family {:?} needs a name, a root, and at least one probe",
                f.family
            )));
        }
    }
    Ok(families)
}
