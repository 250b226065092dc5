//! kron: build codec artifacts, embed strings, probe retrieval geometry,
//! and report memory/parameter accounting from the command line.
//!
//! Reports are JSON lines on stdout by default (`--tsv` switches the
//! tabular commands to tab-separated rows). Exit codes: 0 success,
//! 2 usage error, 1 runtime error.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kroncodec::backend::{
    build_byte_buffer, build_table, compute_dynamic, lookup, ByteBuffer, CodecTable,
};
use kroncodec::codec::{encode, truncate_utf8_safe, z_normalize, CodecConfig};
use kroncodec::io::Scalar;
use kroncodec::matrix::Matrix;
use kroncodec::probes::{
    anisotropy, jaccard_canonical_topk, load_probe_families, make_query, morph_report,
    top_k_neighbors, EmbeddingMatrix, ProbeSpace, Query, QueryMode,
};
use kroncodec::projection::{param_accounting, project, ProjectionMatrix};
use kroncodec::vocab::{load_vocab, VocabFormat, Vocabulary};

/// Usage-class failure (bad flag combination caught after parsing).
/// Distinguished from runtime errors so it can exit with code 2,
/// matching what clap does for malformed invocations.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

#[derive(Parser)]
#[command(
    name = "kron",
    version,
    about = "Byte-position codec toolkit: embedding artifacts, retrieval probes, accounting"
)]
struct Cli {
    /// Print errors to stderr as a single JSON object
    #[arg(long, global = true)]
    json_errors: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Precompute a vocabulary's dense codec table
    BuildTable(BuildTableArgs),
    /// Pack a vocabulary's token bytes for on-the-fly reconstruction
    BuildBuffer(BuildBufferArgs),
    /// Print codec (optionally projected) vectors for strings or token ids
    Embed(EmbedArgs),
    /// Top-k cosine retrieval around probes, with morphology scores
    Neighbors(NeighborsArgs),
    /// Fraction of tokens whose bytes fit at each candidate byte budget
    Coverage(CoverageArgs),
    /// Canonical-form retrieval overlap between vocabularies
    Jaccard(JaccardArgs),
    /// Input-side parameter accounting for a model configuration
    Accounting(AccountingArgs),
    /// Mean-vector norm and sampled pairwise cosine of an embedding space
    Anisotropy(AnisotropyArgs),
    /// Throughput of table gather vs on-the-fly reconstruction
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Auto,
    Gpt2Json,
    TokenizerJson,
    Tsv,
}

impl From<FormatArg> for VocabFormat {
    fn from(f: FormatArg) -> VocabFormat {
        match f {
            FormatArg::Auto => VocabFormat::Auto,
            FormatArg::Gpt2Json => VocabFormat::Gpt2Json,
            FormatArg::TokenizerJson => VocabFormat::TokenizerJson,
            FormatArg::Tsv => VocabFormat::Tsv,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScalarArg {
    F32,
    Bf16,
}

impl From<ScalarArg> for Scalar {
    fn from(s: ScalarArg) -> Scalar {
        match s {
            ScalarArg::F32 => Scalar::F32,
            ScalarArg::Bf16 => Scalar::Bf16,
        }
    }
}

#[derive(Args)]
struct BuildTableArgs {
    /// Vocabulary file
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    format: FormatArg,
    /// Max bytes kept per token
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u32).range(1..))]
    dp: u32,
    /// Store raw unit-norm rows instead of z-normalized rows
    #[arg(long)]
    no_znorm: bool,
    /// Output table file
    #[arg(long)]
    out: PathBuf,
    /// On-disk scalar width
    #[arg(long, value_enum, default_value_t = ScalarArg::F32)]
    scalar: ScalarArg,
    /// Extra pieces to treat as special tokens (literal text)
    #[arg(long)]
    special: Vec<String>,
}

#[derive(Args)]
struct BuildBufferArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    format: FormatArg,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u32).range(1..))]
    dp: u32,
    /// Reconstruct raw rows (no z-norm) when this buffer is used
    #[arg(long)]
    no_znorm: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    special: Vec<String>,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["text", "ids"]))]
#[command(group = clap::ArgGroup::new("cfg").required(true).args(["dp", "backend"]))]
struct EmbedArgs {
    /// Strings to embed as raw byte sequences
    #[arg(value_name = "TEXT")]
    text: Vec<String>,
    /// Token ids to embed through the backend (comma separated)
    #[arg(long, value_delimiter = ',')]
    ids: Vec<u32>,
    /// Codec table or byte-buffer file supplying the configuration (and rows for --ids)
    #[arg(long)]
    backend: Option<PathBuf>,
    /// Codec max bytes, for embedding strings without an artifact
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    dp: Option<u32>,
    /// Produce raw unit-norm vectors instead of z-normalized vectors
    #[arg(long)]
    no_znorm: bool,
    /// Projection file mapping codec vectors into model space
    #[arg(long)]
    projection: Option<PathBuf>,
    /// Tab-separated output instead of JSON lines
    #[arg(long)]
    tsv: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    /// Encode the probe's bytes directly (codec spaces only)
    Codec,
    /// Look the probe up as a vocabulary piece
    Piece,
    /// Use the mean of explicitly given token ids
    Ids,
}

#[derive(Args)]
struct NeighborsArgs {
    /// Probe strings (repeatable)
    #[arg(long = "probe", required = true)]
    probes: Vec<String>,
    /// Codec table or embedding-matrix file to search in
    #[arg(long)]
    space: PathBuf,
    /// Vocabulary for piece decoration and piece-mode queries
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    format: FormatArg,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    k: u32,
    #[arg(long, value_enum, default_value_t = ModeArg::Codec)]
    mode: ModeArg,
    /// Token ids for --mode ids (comma separated)
    #[arg(long, value_delimiter = ',')]
    ids: Vec<u32>,
    /// Probe-family file adding strict/root morphology scores
    #[arg(long)]
    families: Option<PathBuf>,
    #[arg(long)]
    tsv: bool,
}

#[derive(Args)]
struct CoverageArgs {
    /// Vocabulary files (repeatable)
    #[arg(long = "vocab", required = true)]
    vocabs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    format: FormatArg,
    /// Byte budgets to evaluate (comma separated)
    #[arg(long, value_delimiter = ',', required = true,
          value_parser = clap::value_parser!(u32).range(1..))]
    dp: Vec<u32>,
    #[arg(long)]
    tsv: bool,
}

#[derive(Args)]
struct JaccardArgs {
    /// Vocabulary files (give at least two)
    #[arg(long = "vocab", required = true)]
    vocabs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    format: FormatArg,
    /// Probe strings (repeatable)
    #[arg(long = "probe", required = true)]
    probes: Vec<String>,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    k: u32,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u32).range(1..))]
    dp: u32,
    #[arg(long)]
    tsv: bool,
}

#[derive(Args)]
struct AccountingArgs {
    /// Vocabulary size V
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    vocab_size: u64,
    /// Model width
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    d_model: u64,
    /// Codec max bytes per token
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    dp: u64,
    /// Codec dimensionality (default 256 * dp)
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    big_d: Option<u64>,
    #[arg(long)]
    tsv: bool,
}

#[derive(Args)]
struct AnisotropyArgs {
    /// Codec table or embedding-matrix file
    #[arg(long)]
    space: PathBuf,
    /// Number of random row pairs to sample
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u32).range(1..))]
    pairs: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    /// Codec table file (gather backend)
    #[arg(long)]
    table: PathBuf,
    /// Byte-buffer file (on-the-fly backend)
    #[arg(long)]
    buffer: PathBuf,
    /// Ids per timed batch
    #[arg(long, default_value_t = 4096, value_parser = clap::value_parser!(u32).range(1..))]
    batch: u32,
    /// Timed iterations per backend
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u32).range(1..))]
    iters: u32,
    /// Discarded warmup iterations per backend
    #[arg(long, default_value_t = 3)]
    warmup: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    // Die silently on a closed pipe (`kron ... | head`) like any other
    // unix filter, instead of panicking on the first failed write.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if cli.json_errors {
                let msg = serde_json::json!({ "error": format!("{e:#}") });
                eprintln!("{msg}");
            } else {
                eprintln!("error: {e:#}");
            }
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(command: &Command) -> Result<()> {
    match command {
        Command::BuildTable(a) => cmd_build_table(a),
        Command::BuildBuffer(a) => cmd_build_buffer(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Neighbors(a) => cmd_neighbors(a),
        Command::Coverage(a) => cmd_coverage(a),
        Command::Jaccard(a) => cmd_jaccard(a),
        Command::Accounting(a) => cmd_accounting(a),
        Command::Anisotropy(a) => cmd_anisotropy(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn load_vocab_arg(path: &Path, format: FormatArg, specials: &[String]) -> Result<Vocabulary> {
    let extra = if specials.is_empty() { None } else { Some(specials) };
    load_vocab(path, format.into(), extra)
        .with_context(|| format!("loading vocabulary {}", path.display()))
}

fn config_from(dp: u32, no_znorm: bool) -> Result<CodecConfig> {
    Ok(CodecConfig::new(dp as usize)?.with_znorm(!no_znorm))
}

// ---- build commands -------------------------------------------------------------

fn cmd_build_table(a: &BuildTableArgs) -> Result<()> {
    let vocab = load_vocab_arg(&a.vocab, a.format, &a.special)?;
    let config = config_from(a.dp, a.no_znorm)?;
    let table = build_table(&vocab, &config)?;
    table.to_file(&a.out, a.scalar.into())?;
    let bytes = std::fs::metadata(&a.out)?.len();
    println!(
        "{}",
        serde_json::json!({
            "vocab": vocab.name(),
            "tokens": table.vocab_size(),
            "dp": config.d_p(),
            "dim": config.dim(),
            "znorm": config.apply_znorm(),
            "truncated_tokens": table.truncated_ids().len(),
            "out": a.out.display().to_string(),
            "file_bytes": bytes,
        })
    );
    Ok(())
}

fn cmd_build_buffer(a: &BuildBufferArgs) -> Result<()> {
    let vocab = load_vocab_arg(&a.vocab, a.format, &a.special)?;
    let config = config_from(a.dp, a.no_znorm)?;
    let buffer = build_byte_buffer(&vocab, &config)?;
    buffer.to_file(&a.out)?;
    println!(
        "{}",
        serde_json::json!({
            "vocab": vocab.name(),
            "tokens": buffer.vocab_size(),
            "dp": config.d_p(),
            "znorm": config.apply_znorm(),
            "out": a.out.display().to_string(),
            "payload_bytes": buffer.footprint_bytes(),
        })
    );
    Ok(())
}

// ---- embed ----------------------------------------------------------------------

enum Backend {
    Table(CodecTable),
    Buffer(ByteBuffer),
}

/// Sniff a backend file by its magic. The byte-buffer format does not
/// store the z-norm choice, so the caller supplies it.
fn load_backend(path: &Path, apply_znorm_for_buffer: bool) -> Result<Backend> {
    match read_magic(path)? {
        m if m.starts_with(b"KBT1") => Ok(Backend::Table(CodecTable::from_file(path)?)),
        m if m.starts_with(b"KBB1") => {
            Ok(Backend::Buffer(ByteBuffer::from_file(path, apply_znorm_for_buffer)?))
        }
        _ => bail!("{}: not a codec table or byte buffer", path.display()),
    }
}

fn read_magic(path: &Path) -> Result<[u8; 5]> {
    let mut f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut magic = [0u8; 5];
    f.read_exact(&mut magic)
        .with_context(|| format!("{}: file too short", path.display()))?;
    Ok(magic)
}

fn cmd_embed(a: &EmbedArgs) -> Result<()> {
    if !a.ids.is_empty() && a.backend.is_none() {
        return Err(usage("--ids needs --backend (ids only resolve against a built artifact)"));
    }
    let backend = match &a.backend {
        Some(path) => Some(load_backend(path, !a.no_znorm)?),
        None => None,
    };
    let config = match (&backend, a.dp) {
        (Some(Backend::Table(t)), None) => {
            if a.no_znorm && t.config().apply_znorm() {
                return Err(usage(
                    "--no-znorm contradicts the table header (the table stores z-normalized rows)",
                ));
            }
            *t.config()
        }
        (Some(Backend::Buffer(b)), None) => *b.config(),
        (None, Some(dp)) => config_from(dp, a.no_znorm)?,
        // clap's "cfg" group guarantees exactly one source
        _ => unreachable!(),
    };

    // each output row lands in an f32 matrix, the projection input type
    let (labels, rows): (Vec<serde_json::Value>, Matrix) = if !a.text.is_empty() {
        let mut rows = Matrix::zeros(a.text.len(), config.dim());
        let mut labels = Vec::with_capacity(a.text.len());
        for (i, s) in a.text.iter().enumerate() {
            let bytes = s.as_bytes();
            let kept = truncate_utf8_safe(bytes, config.d_p());
            if kept.len() < bytes.len() {
                log::warn!(
                    "input {:?} ({} bytes) truncated to its first {} bytes",
                    s,
                    bytes.len(),
                    kept.len()
                );
            }
            let v = encode(bytes, &config)?;
            let dense = if config.apply_znorm() { z_normalize(&v)? } else { v.to_dense() };
            for (o, x) in rows.row_mut(i).iter_mut().zip(&dense) {
                *o = *x as f32;
            }
            labels.push(serde_json::json!({ "text": s }));
        }
        (labels, rows)
    } else {
        let backend = backend.as_ref().expect("checked above: ids imply a backend");
        let rows = match backend {
            Backend::Table(t) => lookup(t, &a.ids)?,
            Backend::Buffer(b) => compute_dynamic(b, &a.ids)?,
        };
        (a.ids.iter().map(|id| serde_json::json!({ "id": id })).collect(), rows)
    };

    let out = match &a.projection {
        Some(path) => {
            let w = ProjectionMatrix::from_file(path)?;
            project(&rows, &w)?
        }
        None => rows,
    };

    for (label, row) in labels.iter().zip(out.iter_rows()) {
        if a.tsv {
            let key = label
                .get("text")
                .and_then(|v| v.as_str())
                .map(str::to_string)
                .unwrap_or_else(|| label.get("id").unwrap().to_string());
            let vals: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            println!("{key}\t{}", vals.join("\t"));
        } else {
            let values: Vec<f64> = row.iter().map(|&x| x as f64).collect();
            let mut obj = label.as_object().unwrap().clone();
            obj.insert("dim".into(), serde_json::json!(row.len()));
            obj.insert("values".into(), serde_json::json!(values));
            println!("{}", serde_json::Value::Object(obj));
        }
    }
    Ok(())
}

// ---- neighbors --------------------------------------------------------------------

enum SpaceFile {
    Table(CodecTable),
    Embedding(EmbeddingMatrix),
}

fn load_space(path: &Path) -> Result<SpaceFile> {
    match read_magic(path)? {
        m if m.starts_with(b"KEMB1") => Ok(SpaceFile::Embedding(EmbeddingMatrix::from_file(path)?)),
        m if m.starts_with(b"KBT1") => Ok(SpaceFile::Table(CodecTable::from_file(path)?)),
        _ => bail!("{}: not a codec table or embedding matrix", path.display()),
    }
}

fn probe_space(path: &Path) -> Result<ProbeSpace> {
    Ok(match load_space(path)? {
        SpaceFile::Table(t) => ProbeSpace::from_codec_table(&t),
        SpaceFile::Embedding(e) => ProbeSpace::from_embedding(&e),
    })
}

/// Retrieval can return at most V-1 rows once the probe's own row is
/// held out, so larger k values are clamped with a warning.
fn clamp_k(k: u32, vocab_size: usize) -> usize {
    let cap = vocab_size.saturating_sub(1).max(1);
    if (k as usize) > cap {
        log::warn!("k={k} exceeds the {vocab_size}-row space; clamped to {cap}");
        cap
    } else {
        k as usize
    }
}

fn cmd_neighbors(a: &NeighborsArgs) -> Result<()> {
    let space = probe_space(&a.space)?;
    let vocab = match &a.vocab {
        Some(p) => Some(load_vocab_arg(p, a.format, &[])?),
        None => None,
    };
    let mode = match a.mode {
        ModeArg::Codec => QueryMode::CodecEncode,
        ModeArg::Piece => {
            if vocab.is_none() {
                return Err(usage("--mode piece needs --vocab"));
            }
            QueryMode::ExactPiece
        }
        ModeArg::Ids => {
            if a.ids.is_empty() {
                return Err(usage("--mode ids needs --ids"));
            }
            QueryMode::ExplicitIds(a.ids.clone())
        }
    };
    let families = match &a.families {
        Some(p) => load_probe_families(p)?,
        None => Vec::new(),
    };
    let k = clamp_k(a.k, space.centered().len());

    for probe in &a.probes {
        let Query { vector, self_ids } = make_query(probe, &space, vocab.as_ref(), &mode)?;
        let hits = top_k_neighbors(&space, &vector, k, &self_ids, vocab.as_ref())?;
        if a.tsv {
            for (rank, h) in hits.iter().enumerate() {
                println!(
                    "{probe}\t{}\t{}\t{}\t{}\t{}",
                    rank + 1,
                    h.token_id,
                    h.piece,
                    h.cosine,
                    h.canonical
                );
            }
        } else {
            let family = families
                .iter()
                .find(|f| f.probes.iter().any(|p| p == probe))
                .filter(|f| !f.strict_family.is_empty());
            let report = morph_report(
                probe,
                &hits,
                family.map(|f| (f.strict_family.as_slice(), f.root.as_str())),
            )?;
            println!("{}", serde_json::to_string(&report)?);
        }
    }
    Ok(())
}

// ---- coverage ----------------------------------------------------------------------

fn cmd_coverage(a: &CoverageArgs) -> Result<()> {
    let dps: Vec<usize> = a.dp.iter().map(|&d| d as usize).collect();
    for path in &a.vocabs {
        let vocab = load_vocab_arg(path, a.format, &[])?;
        let fractions = kroncodec::vocab::coverage_stats(&vocab, &dps)?;
        for (&dp, &fraction) in dps.iter().zip(&fractions) {
            if a.tsv {
                println!("{}\t{}\t{}", vocab.name(), dp, fraction * 100.0);
            } else {
                println!(
                    "{}",
                    serde_json::json!({
                        "vocab": vocab.name(),
                        "dp": dp,
                        "fraction": fraction,
                        "percent": fraction * 100.0,
                    })
                );
            }
        }
    }
    Ok(())
}

// ---- jaccard -----------------------------------------------------------------------

fn cmd_jaccard(a: &JaccardArgs) -> Result<()> {
    if a.vocabs.len() < 2 {
        return Err(usage("jaccard needs at least two --vocab files"));
    }
    let config = config_from(a.dp, false)?;
    let mut names = Vec::new();
    let mut spaces = Vec::new();
    let mut vocabs = Vec::new();
    for path in &a.vocabs {
        let vocab = load_vocab_arg(path, a.format, &[])?;
        let table = build_table(&vocab, &config)?;
        names.push(vocab.name().to_string());
        spaces.push(ProbeSpace::from_codec_table(&table));
        vocabs.push(vocab);
    }
    // one shared k so overlap is comparable across every pair
    let k = spaces.iter().map(|s| clamp_k(a.k, s.centered().len())).min().unwrap();

    let mut sum = 0.0;
    let mut count = 0usize;
    for probe in &a.probes {
        let mut hit_lists = Vec::new();
        for (space, vocab) in spaces.iter().zip(&vocabs) {
            let q = make_query(probe, space, Some(vocab), &QueryMode::CodecEncode)?;
            hit_lists.push(top_k_neighbors(space, &q.vector, k, &q.self_ids, Some(vocab))?);
        }
        for i in 0..hit_lists.len() {
            for j in (i + 1)..hit_lists.len() {
                let jac = jaccard_canonical_topk(&hit_lists[i], &hit_lists[j], k)?;
                sum += jac;
                count += 1;
                if a.tsv {
                    println!("{probe}\t{}\t{}\t{jac}", names[i], names[j]);
                } else {
                    println!(
                        "{}",
                        serde_json::json!({
                            "probe": probe,
                            "vocab_a": names[i],
                            "vocab_b": names[j],
                            "k": k,
                            "jaccard": jac,
                        })
                    );
                }
            }
        }
    }
    let mean = sum / count as f64;
    if a.tsv {
        println!("mean\t\t\t{mean}");
    } else {
        println!(
            "{}",
            serde_json::json!({
                "mean_jaccard": mean,
                "probes": a.probes.len(),
                "pairs": count / a.probes.len(),
            })
        );
    }
    Ok(())
}

// ---- accounting / anisotropy ----------------------------------------------------------

fn cmd_accounting(a: &AccountingArgs) -> Result<()> {
    let big_d = a.big_d.unwrap_or(256 * a.dp);
    let acc = param_accounting(a.vocab_size, a.d_model, big_d, a.dp)?;
    if a.tsv {
        println!("bpe_input_params\t{}", acc.bpe_input_params);
        println!("kron_proj_params\t{}", acc.kron_proj_params);
        println!("buffer_bytes\t{}", acc.buffer_bytes);
        println!("input_side_reduction\t{}", acc.input_side_reduction);
        println!("net_trainable_delta_vs_tied\t{}", acc.net_trainable_delta_vs_tied);
    } else {
        println!("{}", serde_json::to_string(&acc)?);
    }
    Ok(())
}

fn cmd_anisotropy(a: &AnisotropyArgs) -> Result<()> {
    let embedding = match load_space(&a.space)? {
        SpaceFile::Table(t) => EmbeddingMatrix::from_codec_table(&t),
        SpaceFile::Embedding(e) => e,
    };
    let report = anisotropy(&embedding, a.pairs as usize, a.seed)?;
    let mut obj = serde_json::to_value(report)?;
    obj.as_object_mut()
        .unwrap()
        .insert("space".into(), serde_json::json!(a.space.display().to_string()));
    println!("{obj}");
    Ok(())
}

// ---- bench -------------------------------------------------------------------------

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let table = CodecTable::from_file(&a.table)?;
    // the buffer format does not carry the z-norm choice; take it from
    // the table header so both backends reconstruct the same rows
    let buffer = ByteBuffer::from_file(&a.buffer, table.config().apply_znorm())?;
    if buffer.vocab_size() != table.vocab_size() || buffer.config() != table.config() {
        bail!(
            "backend mismatch: table is {} tokens at dp={}, buffer is {} tokens at dp={}",
            table.vocab_size(),
            table.config().d_p(),
            buffer.vocab_size(),
            buffer.config().d_p()
        );
    }

    let v = table.vocab_size() as u32;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let batches: Vec<Vec<u32>> = (0..a.warmup + a.iters)
        .map(|_| (0..a.batch).map(|_| rng.random_range(0..v)).collect())
        .collect();

    // numerical cross-check on the first batch
    let ga = lookup(&table, &batches[0])?;
    let gb = compute_dynamic(&buffer, &batches[0])?;
    let max_diff = ga
        .data()
        .iter()
        .zip(gb.data())
        .map(|(a, b)| (a - b).abs() as f64)
        .fold(0.0, f64::max);

    let warmup = a.warmup as usize;
    let tokens = (a.batch as u64 * a.iters as u64) as f64;
    let table_secs = time_backend(&batches, warmup, |ids| lookup(&table, ids))?;
    let dynamic_secs = time_backend(&batches, warmup, |ids| compute_dynamic(&buffer, ids))?;

    for (name, secs) in [("table_gather", table_secs), ("dynamic_reconstruct", dynamic_secs)] {
        println!(
            "{}",
            serde_json::json!({
                "backend": name,
                "tokens_per_sec": tokens / secs,
                "seconds": secs,
                "batch": a.batch,
                "iters": a.iters,
                "max_abs_diff_vs_other": max_diff,
            })
        );
    }
    Ok(())
}

fn time_backend<F>(batches: &[Vec<u32>], warmup: usize, mut run: F) -> Result<f64>
where
    F: FnMut(&[u32]) -> kroncodec::Result<Matrix>,
{
    for batch in &batches[..warmup] {
        std::hint::black_box(run(batch)?);
    }
    let start = Instant::now();
    for batch in &batches[warmup..] {
        std::hint::black_box(run(batch)?);
    }
    Ok(start.elapsed().as_secs_f64())
}
