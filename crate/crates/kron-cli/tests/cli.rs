//! End-to-end checks of the kron binary: exit codes, JSON shapes, and
//! build-then-load equality against an in-memory build.

use std::path::Path;
use std::process::Output;

use kroncodec::backend::{build_table, CodecTable};
use kroncodec::codec::CodecConfig;
use kroncodec::vocab::{load_vocab, VocabFormat};

fn kron(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_kron"))
        .args(args)
        .output()
        .expect("spawn kron")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

fn stdout_json_lines(out: &Output) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).expect("stdout line is JSON"))
        .collect()
}

fn write_vocab(dir: &Path, name: &str, lines: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, lines).unwrap();
    path.display().to_string()
}

const VOCAB_A: &str = "0\trun\n1\truns\n2\trunning\n3\trust\n4\trune\n5\twalk\n6\twalks\n7\tnation\n";

#[test]
fn embed_string_without_artifacts() {
    let out = kron(&["embed", "run", "--dp", "16", "--no-znorm"]);
    assert_eq!(exit_code(&out), 0, "{out:?}");
    let lines = stdout_json_lines(&out);
    assert_eq!(lines.len(), 1);
    let o = &lines[0];
    assert_eq!(o["text"], "run");
    assert_eq!(o["dim"], 4096);
    let values: Vec<f64> =
        o["values"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(values.len(), 4096);
    let nonzeros: Vec<usize> =
        values.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| i).collect();
    // 'r' 'u' 'n' at positions 0..3 under the byte*dp+pos layout
    assert_eq!(nonzeros, vec![1762, 1824, 1873]);
    for i in nonzeros {
        assert!((values[i] - 1.0 / 3f64.sqrt()).abs() < 1e-7);
    }
}

#[test]
fn embed_out_of_vocabulary_string() {
    let out = kron(&["embed", "kronekticus", "--dp", "32"]);
    assert_eq!(exit_code(&out), 0);
    let lines = stdout_json_lines(&out);
    let values: Vec<f64> =
        lines[0]["values"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(values.len(), 8192);
    let norm: f64 = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm > 0.0);
}

#[test]
fn embed_truncates_long_input_with_warning() {
    let long = "a".repeat(40);
    let out = kron(&["embed", &long, "--dp", "32", "--no-znorm"]);
    assert_eq!(exit_code(&out), 0);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("truncated"), "stderr: {stderr}");

    let prefix = "a".repeat(32);
    let out_prefix = kron(&["embed", &prefix, "--dp", "32", "--no-znorm"]);
    assert_eq!(stdout_json_lines(&out)[0]["values"], stdout_json_lines(&out_prefix)[0]["values"]);
}

#[test]
fn embed_ids_need_a_backend() {
    let out = kron(&["embed", "--ids", "1", "--dp", "4"]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn build_table_usage_errors() {
    // missing --vocab entirely
    let out = kron(&["build-table", "--out", "/tmp/never-written.kbt"]);
    assert_eq!(exit_code(&out), 2);
    // dp = 0 rejected at parse time
    let out = kron(&["build-table", "--vocab", "x.tsv", "--dp", "0", "--out", "/tmp/n.kbt"]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn build_then_load_matches_in_memory_build() {
    let dir = tempfile::tempdir().unwrap();
    let vocab_path = write_vocab(dir.path(), "va.tsv", VOCAB_A);
    let table_path = dir.path().join("a.kbt");

    let out = kron(&[
        "build-table",
        "--vocab",
        &vocab_path,
        "--dp",
        "8",
        "--out",
        table_path.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{out:?}");
    let summary = &stdout_json_lines(&out)[0];
    assert_eq!(summary["tokens"], 8);
    assert_eq!(summary["dim"], 2048);
    assert_eq!(summary["znorm"], true);

    let reloaded = CodecTable::from_file(&table_path).unwrap();
    let vocab = load_vocab(Path::new(&vocab_path), VocabFormat::Tsv, None).unwrap();
    let config = CodecConfig::new(8).unwrap();
    let built = build_table(&vocab, &config).unwrap();
    assert_eq!(reloaded.config(), built.config());
    assert_eq!(reloaded.matrix().data(), built.matrix().data());
}

#[test]
fn embed_ids_match_across_backends() {
    let dir = tempfile::tempdir().unwrap();
    let vocab_path = write_vocab(dir.path(), "va.tsv", VOCAB_A);
    let table = dir.path().join("a.kbt").display().to_string();
    let buffer = dir.path().join("a.kbb").display().to_string();
    assert_eq!(
        exit_code(&kron(&["build-table", "--vocab", &vocab_path, "--dp", "8", "--out", &table])),
        0
    );
    assert_eq!(
        exit_code(&kron(&["build-buffer", "--vocab", &vocab_path, "--dp", "8", "--out", &buffer])),
        0
    );

    let via_table = kron(&["embed", "--ids", "0,3,7", "--backend", &table]);
    let via_buffer = kron(&["embed", "--ids", "0,3,7", "--backend", &buffer]);
    assert_eq!(exit_code(&via_table), 0, "{via_table:?}");
    assert_eq!(exit_code(&via_buffer), 0, "{via_buffer:?}");
    assert_eq!(via_table.stdout, via_buffer.stdout);
    let lines = stdout_json_lines(&via_table);
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1]["id"], 3);
}

#[test]
fn neighbors_reports_morph_scores_and_clamps_k() {
    let dir = tempfile::tempdir().unwrap();
    let vocab_path = write_vocab(dir.path(), "va.tsv", VOCAB_A);
    let table = dir.path().join("a.kbt").display().to_string();
    kron(&["build-table", "--vocab", &vocab_path, "--dp", "8", "--out", &table]);

    let out = kron(&[
        "neighbors", "--probe", "run", "--space", &table, "--vocab", &vocab_path, "--k", "99",
    ]);
    assert_eq!(exit_code(&out), 0, "{out:?}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("clamped"));
    let report = &stdout_json_lines(&out)[0];
    assert_eq!(report["probe"], "run");
    assert_eq!(report["k"], 7); // 8-row space minus self capacity
    assert!(report["loose_score"].as_f64().unwrap() >= 0.0);
    assert!(report["hits"].as_array().unwrap().len() == 7);
    // codec-mode query on an in-vocab probe puts the probe's own row first
    assert_eq!(report["hits"][0]["piece"], "run");
}

#[test]
fn neighbors_piece_not_found_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let vocab_path = write_vocab(dir.path(), "va.tsv", VOCAB_A);
    let table = dir.path().join("a.kbt").display().to_string();
    kron(&["build-table", "--vocab", &vocab_path, "--dp", "8", "--out", &table]);

    let out = kron(&[
        "neighbors",
        "--probe",
        "zzz",
        "--space",
        &table,
        "--vocab",
        &vocab_path,
        "--mode",
        "piece",
        "--json-errors",
    ]);
    assert_eq!(exit_code(&out), 1);
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert!(err["error"].as_str().unwrap().contains("zzz"));
}

#[test]
fn coverage_single_token_vocab() {
    let dir = tempfile::tempdir().unwrap();
    let vocab_path = write_vocab(dir.path(), "one.tsv", "0\ta\n");
    let out = kron(&["coverage", "--vocab", &vocab_path, "--dp", "1"]);
    assert_eq!(exit_code(&out), 0, "{out:?}");
    let line = &stdout_json_lines(&out)[0];
    assert_eq!(line["percent"], 100.0);

    // a dp list is mandatory
    let out = kron(&["coverage", "--vocab", &vocab_path]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn jaccard_same_vocab_is_one_and_needs_two() {
    let dir = tempfile::tempdir().unwrap();
    let vocab_path = write_vocab(dir.path(), "va.tsv", VOCAB_A);

    let out = kron(&[
        "jaccard", "--vocab", &vocab_path, "--vocab", &vocab_path, "--probe", "run", "--dp", "8",
        "--k", "3",
    ]);
    assert_eq!(exit_code(&out), 0, "{out:?}");
    let lines = stdout_json_lines(&out);
    assert_eq!(lines[0]["jaccard"], 1.0);
    assert_eq!(lines.last().unwrap()["mean_jaccard"], 1.0);

    let out = kron(&["jaccard", "--vocab", &vocab_path, "--probe", "run"]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn accounting_matches_reference_row() {
    let out =
        kron(&["accounting", "--vocab-size", "50272", "--d-model", "768", "--dp", "16"]);
    assert_eq!(exit_code(&out), 0);
    let o = &stdout_json_lines(&out)[0];
    assert_eq!(o["bpe_input_params"], 38_608_896u64);
    assert_eq!(o["kron_proj_params"], 3_145_728u64);
    assert_eq!(o["buffer_bytes"], 904_896u64);
    assert_eq!(o["net_trainable_delta_vs_tied"], 3_145_728u64);
}

#[test]
fn anisotropy_and_bench_run_on_built_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let vocab_path = write_vocab(dir.path(), "va.tsv", VOCAB_A);
    let table = dir.path().join("a.kbt").display().to_string();
    let buffer = dir.path().join("a.kbb").display().to_string();
    kron(&["build-table", "--vocab", &vocab_path, "--dp", "8", "--out", &table]);
    kron(&["build-buffer", "--vocab", &vocab_path, "--dp", "8", "--out", &buffer]);

    let out = kron(&["anisotropy", "--space", &table, "--pairs", "50", "--seed", "3"]);
    assert_eq!(exit_code(&out), 0, "{out:?}");
    let o = &stdout_json_lines(&out)[0];
    assert!(o["mean_norm"].as_f64().unwrap() >= 0.0);
    assert_eq!(o["pair_samples"], 50);

    let out = kron(&[
        "bench", "--table", &table, "--buffer", &buffer, "--batch", "32", "--iters", "3",
        "--warmup", "1",
    ]);
    assert_eq!(exit_code(&out), 0, "{out:?}");
    let lines = stdout_json_lines(&out);
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["backend"], "table_gather");
    assert_eq!(lines[1]["backend"], "dynamic_reconstruct");
    for l in &lines {
        assert_eq!(l["max_abs_diff_vs_other"], 0.0);
        assert!(l["tokens_per_sec"].as_f64().unwrap() > 0.0);
    }
}
