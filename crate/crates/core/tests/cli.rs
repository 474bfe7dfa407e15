use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn hiercode(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hiercode"))
        .args(args)
        .env_remove("HIERCODE_SEED")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("JSON report")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TOY: &str = "# toy\n木\t木\n林\t⿰木木\n森\t⿱木⿰木木\n";

fn build_toy(dir: &TempDir) -> PathBuf {
    let ids = write(dir, "toy.ids", TOY);
    let cb = dir.path().join("toy.hc");
    let out = hiercode(&["build-codebook", "--ids", s(&ids), "--out", s(&cb)]);
    let report = json(&out);
    assert_eq!(report["characters"], 3);
    cb
}

/// Codebook rows as a text frames file, one frame per line.
fn rows_as_frames(cb: &Path, chars: &[&str]) -> Vec<Vec<f64>> {
    let mut args = vec!["encode", "--codebook", s(cb)];
    args.extend_from_slice(chars);
    let report = json(&hiercode(&args));
    report["codes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| {
            c["code"]
                .as_str()
                .unwrap()
                .chars()
                .map(|t| match t {
                    '+' => 1.0,
                    '-' => -1.0,
                    _ => 0.0,
                })
                .collect()
        })
        .collect()
}

fn frames_text(frames: &[Vec<f64>]) -> String {
    frames
        .iter()
        .map(|f| {
            f.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("\t")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn toy_build_has_paper_length() {
    let dir = tempfile::tempdir().unwrap();
    let ids = write(&dir, "toy.ids", TOY);
    let cb = dir.path().join("toy.hc");
    let report = json(&hiercode(&[
        "build-codebook",
        "--ids",
        s(&ids),
        "--out",
        s(&cb),
    ]));
    assert_eq!(report["characters"], 3);
    assert_eq!(report["code_len"], 384);
    assert_eq!(report["collisions"], 0);
    // 木 is contained in 林: a dominated pair
    assert!(report["margins"]["dominated_pairs"].as_u64().unwrap() >= 1);
    assert!(cb.exists());
}

#[test]
fn ternary_entries_build() {
    let dir = tempfile::tempdir().unwrap();
    let ids = write(&dir, "t.ids", "川\t⿲丿丨丨\n三\t⿳一一一\n");
    let cb = dir.path().join("t.hc");
    let report = json(&hiercode(&[
        "build-codebook",
        "--ids",
        s(&ids),
        "--out",
        s(&cb),
    ]));
    assert_eq!(report["characters"], 2);
}

#[test]
fn duplicate_character_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let ids = write(&dir, "d.ids", "木\t木\n林\t⿰木木\n木\t⿱木木\n");
    let out = hiercode(&[
        "build-codebook",
        "--ids",
        s(&ids),
        "--out",
        s(&dir.path().join("d.hc")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(
        err.contains("duplicate character 木") && err.contains("line 3") && err.contains("d.ids"),
        "{err}"
    );
}

#[test]
fn parse_errors_name_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let ids = write(&dir, "bad.ids", "木\t木\n林\t⿰木\n");
    let out = hiercode(&[
        "build-codebook",
        "--ids",
        s(&ids),
        "--out",
        s(&dir.path().join("b.hc")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("bad.ids") && err.contains("line 2"), "{err}");
}

#[test]
fn too_deep_characters_fail_or_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let ids = write(&dir, "deep.ids", "木\t木\n深\t⿰木⿰木⿰木木\n");
    let out = dir.path().join("deep.hc");
    let fail = hiercode(&[
        "build-codebook",
        "--ids",
        s(&ids),
        "--out",
        s(&out),
        "--depth",
        "3",
        "--max-radicals",
        "4",
    ]);
    assert_eq!(fail.status.code(), Some(1));
    assert!(stderr(&fail).contains("line 2"));
    let report = json(&hiercode(&[
        "build-codebook",
        "--ids",
        s(&ids),
        "--out",
        s(&out),
        "--depth",
        "3",
        "--max-radicals",
        "4",
        "--skip-invalid",
    ]));
    assert_eq!(report["characters"], 1);
    assert_eq!(report["skipped"][0]["character"], "深");
}

#[test]
fn invalid_params_rejected_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let out = hiercode(&[
        "build-codebook",
        "--ids",
        "/nonexistent.ids",
        "--out",
        s(&dir.path().join("x")),
        "--depth",
        "9",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_files_exit_two() {
    let out = hiercode(&["stats", "--codebook", "/nonexistent/cb.hc"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/nonexistent/cb.hc"));
    let out = hiercode(&[
        "build-codebook",
        "--ids",
        "/nonexistent.ids",
        "--out",
        "/tmp/never.hc",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stats_ratios() {
    let r = json(&hiercode(&["stats", "--one-hot-classes", "3755"]));
    let ratio = r["stats"]["ratio"].as_f64().unwrap();
    assert!((ratio - (1.0 - 384.0 / 3755.0)).abs() < 1e-12);
    assert!((r["classes_for_reference_ratio"].as_f64().unwrap() - 5189.19).abs() < 0.01);
    let r = json(&hiercode(&["stats", "--one-hot-classes", "384"]));
    assert_eq!(r["stats"]["ratio"].as_f64().unwrap(), 0.0);
}

#[test]
fn stats_reads_codebook_and_prints_tsv() {
    let dir = tempfile::tempdir().unwrap();
    let cb = build_toy(&dir);
    let out = hiercode(&["stats", "--codebook", s(&cb), "--format", "tsv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("code_len\t384\n"), "{text}");
    assert!(text.contains("ratio\t0.89773635153129"), "{text}");
}

#[test]
fn corrupt_codebook_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cb = build_toy(&dir);
    let mut bytes = std::fs::read(&cb).unwrap();
    let k = bytes.len() / 2;
    bytes[k] ^= 1;
    std::fs::write(&cb, bytes).unwrap();
    let out = hiercode(&["stats", "--codebook", s(&cb)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("corrupt"));
}

#[test]
fn decoding_codebook_rows_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let cb = build_toy(&dir);
    let rows = rows_as_frames(&cb, &[]);
    let frames = write(&dir, "rows.tsv", &frames_text(&rows));
    let r = json(&hiercode(&[
        "decode",
        "--codebook",
        s(&cb),
        "--frames",
        s(&frames),
        "--binarize",
        "none",
        "--topk",
        "2",
    ]));
    let labels: Vec<&str> = r["frames"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["top"][0]["label"].as_str().unwrap())
        .collect();
    assert_eq!(labels, ["木", "林", "森"]);
    assert_eq!(r["frames"][0]["top"].as_array().unwrap().len(), 2);
}

#[test]
fn binary_frames_line_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cb = build_toy(&dir);
    let mut rows = rows_as_frames(&cb, &["林", "森"]);
    let codebook = hiercode::codebook::read_codebook(&cb).unwrap();
    let blank: Vec<f64> = codebook.blank_row().iter().map(|&v| v as f64).collect();
    rows.insert(1, blank);
    let frames = hiercode::Frames::from_frames(384, &rows).unwrap();
    let path = dir.path().join("line.bin");
    std::fs::write(&path, hiercode::cli::frames_to_binary(&frames)).unwrap();
    let r = json(&hiercode(&[
        "decode",
        "--codebook",
        s(&cb),
        "--frames",
        s(&path),
        "--mode",
        "line",
        "--binarize",
        "none",
    ]));
    assert_eq!(r["transcript"], "林森");
    let out = hiercode(&[
        "decode",
        "--codebook",
        s(&cb),
        "--frames",
        s(&path),
        "--mode",
        "line",
        "--binarize",
        "none",
        "--format",
        "tsv",
    ]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "林森\n");
}

#[test]
fn wrong_frame_length_names_both() {
    let dir = tempfile::tempdir().unwrap();
    let cb = build_toy(&dir);
    let frames = write(&dir, "short.tsv", "1 0 -1\n");
    let out = hiercode(&["decode", "--codebook", s(&cb), "--frames", s(&frames)]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(
        err.contains("length 3") && err.contains("expects 384"),
        "{err}"
    );
}

#[test]
fn encode_from_ids_matches_codebook() {
    let dir = tempfile::tempdir().unwrap();
    let cb = build_toy(&dir);
    let ids = write(&dir, "toy2.ids", TOY);
    let from_cb = json(&hiercode(&["encode", "--codebook", s(&cb), "林"]));
    let from_ids = json(&hiercode(&["encode", "--ids", s(&ids), "林"]));
    assert_eq!(from_cb["codes"], from_ids["codes"]);
    assert_eq!(from_cb["codes"][0]["code"].as_str().unwrap().len(), 384);
    let missing = hiercode(&["encode", "--codebook", s(&cb), "水"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn seed_flag_overrides_environment() {
    let dir = tempfile::tempdir().unwrap();
    let ids = write(&dir, "toy.ids", TOY);
    let run = |env: Option<&str>, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_hiercode"));
        cmd.args(["encode", "--ids", s(&ids), "木"]);
        cmd.env_remove("HIERCODE_SEED");
        if let Some(e) = env {
            cmd.env("HIERCODE_SEED", e);
        }
        if let Some(f) = flag {
            cmd.args(["--seed", f]);
        }
        json(&cmd.output().unwrap())["codes"][0]["code"].clone()
    };
    assert_eq!(run(Some("7"), None), run(None, Some("7")));
    assert_eq!(run(Some("5"), Some("7")), run(None, Some("7")));
    assert_ne!(run(None, Some("5")), run(None, Some("7")));
}

#[test]
fn prototype_codes_are_used() {
    let dir = tempfile::tempdir().unwrap();
    let ids = write(&dir, "toy.ids", TOY);
    let code = "+-".repeat(18);
    let protos = write(&dir, "p.tsv", &format!("木\t{code}\n"));
    let r = json(&hiercode(&[
        "encode",
        "--ids",
        s(&ids),
        "--prototypes",
        s(&protos),
        "木",
    ]));
    let got = r["codes"][0]["code"].as_str().unwrap();
    assert_eq!(&got[60..96], code);
    let bad = write(&dir, "bad.tsv", "木\t+-+\n");
    let out = hiercode(&["encode", "--ids", s(&ids), "--prototypes", s(&bad), "木"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("bad.tsv"));
}

#[test]
fn eval_zeroshot_is_deterministic_and_exact_without_noise() {
    let args = [
        "eval-zeroshot",
        "--chars",
        "200",
        "--radicals",
        "20",
        "--trials",
        "80",
        "--m",
        "60",
        "--m",
        "120",
        "--line-length",
        "4",
        "--line-trials",
        "20",
        "--blank-prob",
        "0.5",
    ];
    let a = hiercode(&args);
    let b = hiercode(&args);
    assert_eq!(a.stdout, b.stdout);
    let r = json(&a);
    let results = r["results"].as_array().unwrap();
    assert_eq!(results.len(), 2);
    for res in results {
        assert_eq!(res["char"]["accuracy"], 1.0);
        assert_eq!(res["line"]["exact_match_rate"], 1.0);
        assert_eq!(res["char"]["unseen"], 80);
    }
    assert!(r.get("runtime_ms").is_none());
}

#[test]
fn eval_zeroshot_from_ids_file() {
    let dir = tempfile::tempdir().unwrap();
    let ids = write(&dir, "toy.ids", TOY);
    let r = json(&hiercode(&[
        "eval-zeroshot",
        "--ids",
        s(&ids),
        "--m",
        "1",
        "--unseen",
        "2",
        "--trials",
        "10",
        "--timings",
    ]));
    assert_eq!(r["results"][0]["char"]["correct"], 10);
    assert!(r["runtime_ms"].is_u64());
}

#[test]
fn eval_zeroshot_rejects_bad_config() {
    let out = hiercode(&["eval-zeroshot", "--chars", "50", "--flip-rate", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
    let out = hiercode(&[
        "eval-zeroshot",
        "--chars",
        "50",
        "--m",
        "45",
        "--unseen",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_custom_grid_tsv() {
    let out = hiercode(&[
        "sweep",
        "--chars",
        "100",
        "--radicals",
        "15",
        "--trials",
        "50",
        "--point",
        "5,4,36,9",
        "--point",
        "6,4,12,9,2",
        "--flip-rate",
        "0.0",
        "--flip-rate",
        "0.2",
        "--format",
        "tsv",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("name\tD\tL_S\tL_R\tM"));
    assert!(lines[1].starts_with("custom\t5\t4\t36\t9\t1\t384\t"));
    assert!(lines[3].starts_with("custom\t6\t4\t12\t9\t2\t"));
    // zero flip rate is exact
    assert!(lines[1].contains("\t50\t50\t1\t"), "{}", lines[1]);
    let bad = hiercode(&["sweep", "--point", "9,4,36,9"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn ctc_check_reports_pass() {
    let r = json(&hiercode(&[
        "ctc-check",
        "--oracle-instances",
        "30",
        "--gradient-instances",
        "5",
        "--seed",
        "3",
    ]));
    assert_eq!(r["passed"], true);
    assert_eq!(r["checks"].as_array().unwrap().len(), 3);
}

#[test]
fn output_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let out = hiercode(&["stats", "--output", s(&path)]);
    assert!(out.status.success() && out.stdout.is_empty());
    let r: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(r["stats"]["code_len"], 384);
    let out = hiercode(&["stats", "--output", "/nonexistent/dir/r.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_documents_formats() {
    let out = hiercode(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for needle in [
        "FILE FORMATS",
        "u32 t, u32 W",
        "CRC-64/XZ",
        "EXIT CODES",
        "build-codebook",
        "ctc-check",
    ] {
        assert!(text.contains(needle), "{needle}");
    }
}
