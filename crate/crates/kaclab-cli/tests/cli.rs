//! End-to-end runs of the binary: exit codes, table shapes, the CSV/JSON
//! cell mirror, and determinism under a fixed seed.

use std::collections::HashMap;
use std::process::{Command, Output};

fn kaclab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kaclab"))
        .args(args)
        .env_remove("KACLAB_WORKERS")
        .output()
        .expect("binary spawns")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

/// Parse the CSV emission: (header -> column index, data rows, comment lines).
fn parse_csv(text: &str) -> (HashMap<String, usize>, Vec<Vec<String>>, Vec<String>) {
    let mut header = HashMap::new();
    let mut rows = Vec::new();
    let mut comments = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# ") {
            comments.push(rest.to_string());
        } else if header.is_empty() {
            for (i, name) in line.split(',').enumerate() {
                header.insert(name.to_string(), i);
            }
        } else {
            rows.push(line.split(',').map(str::to_string).collect());
        }
    }
    (header, rows, comments)
}

fn field<'a>(
    header: &HashMap<String, usize>,
    row: &'a [String],
    name: &str,
) -> &'a str {
    &row[*header.get(name).unwrap_or_else(|| panic!("column {name}"))]
}

#[test]
fn zn_single_maxwellian_matches_its_closed_form() {
    let out = kaclab(&["zn", "--N", "8", "--maxwellian-a", "0.25"]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let (header, rows, _) = parse_csv(&stdout(&out));
    assert_eq!(rows.len(), 1);
    let rel: f64 = field(&header, &rows[0], "rel_delta").parse().unwrap();
    assert!(rel < 1e-8, "relative delta {rel:.3e}");
    assert_eq!(field(&header, &rows[0], "route"), "box");
    assert!(field(&header, &rows[0], "error").is_empty());
}

#[test]
fn zn_pair_oracle_runs_on_the_oscillatory_route() {
    let out = kaclab(&["zn", "--N", "2", "--delta", "0.3"]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let (header, rows, _) = parse_csv(&stdout(&out));
    assert_eq!(rows.len(), 1);
    assert_eq!(field(&header, &rows[0], "route"), "oscillatory");
    let rel: f64 = field(&header, &rows[0], "rel_delta").parse().unwrap();
    assert!(rel < 1e-4, "relative delta {rel:.3e}");
}

#[test]
fn exit_codes_separate_usage_from_compute_failures() {
    // unknown flag: argument parser, exit 2
    let out = kaclab(&["zn", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));

    // exponent outside the admissible window: usage, exit 2
    let out = kaclab(&["zn", "--N", "8", "--eta", "0.9"]);
    assert_eq!(out.status.code(), Some(2));

    // a fixed weight contradicts the decay-exponent study: usage, exit 2
    let out = kaclab(&["gamma", "--delta", "0.2"]);
    assert_eq!(out.status.code(), Some(2));

    // no admissible schedule weight at N = 4: caught before compute, exit 2
    let out = kaclab(&["approx-scan", "--N", "4"]);
    assert_eq!(out.status.code(), Some(2));

    // admissible fixed weight but below the box regime: the row fails,
    // the table still carries the reason, compute, exit 1
    let out = kaclab(&["approx-scan", "--N", "4", "--delta", "0.2"]);
    assert_eq!(out.status.code(), Some(1));
    let (header, rows, _) = parse_csv(&stdout(&out));
    assert_eq!(rows.len(), 1);
    assert!(field(&header, &rows[0], "error").contains("box regime"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let args = ["validate", "--budget", "150", "--seed", "9"];
    let first = kaclab(&args);
    assert!(first.status.success(), "stderr: {}", String::from_utf8_lossy(&first.stderr));
    let second = kaclab(&args);
    assert_eq!(stdout(&first), stdout(&second));
    let (_, rows, comments) = parse_csv(&stdout(&first));
    assert!(!rows.is_empty());
    assert!(comments.iter().any(|c| c.starts_with("verdict:")));
}

#[test]
fn walk_reports_conservation_and_quartic_verdicts() {
    let out = kaclab(&[
        "walk", "--N", "16", "--t-end", "6.0", "--samples", "6", "--replicas", "4",
        "--init", "hot-pair", "--seed", "3",
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let (header, rows, comments) = parse_csv(&stdout(&out));
    // long form: samples x observables
    assert_eq!(rows.len(), 6 * 4);
    assert!(comments.iter().any(|c| c == "verdict_conservation: pass"));
    assert!(comments.iter().any(|c| c.starts_with("verdict_quartic:")));
    // the conserved mean energy stays at E/N = 1 in every sample row
    for row in &rows {
        if field(&header, row, "observable") == "mean_vsq" {
            let v: f64 = field(&header, row, "value").parse().unwrap();
            assert!((v - 1.0).abs() < 1e-10);
        }
    }
}

#[test]
fn thinned_walk_reports_acceptance_rates() {
    let out = kaclab(&[
        "walk", "--N", "12", "--t-end", "3.0", "--replicas", "2",
        "--kernel", "relative-speed", "--gamma", "1.0", "--seed", "11",
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let (header, rows, comments) = parse_csv(&stdout(&out));
    assert_eq!(rows.len(), 2);
    for row in &rows {
        let rate: f64 = field(&header, row, "acceptance_rate").parse().unwrap();
        assert!(rate > 0.0 && rate <= 1.0);
    }
    assert!(comments.iter().any(|c| c == "verdict_acceptance: pass"));
}

#[test]
fn fubini_check_routes_agree_at_minimum_n() {
    let out = kaclab(&[
        "fubini-check", "--N", "4", "--j", "1", "--budget", "30000", "--seed", "2",
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let (_, rows, comments) = parse_csv(&stdout(&out));
    assert_eq!(rows.len(), 3);
    assert!(comments.iter().any(|c| c == "verdict: pass"));
}

#[test]
fn csv_and_json_cells_mirror_byte_for_byte() {
    let args = ["zn", "--N", "8", "--maxwellian-a", "0.25", "--seed", "4"];
    let csv_out = kaclab(&args);
    assert!(csv_out.status.success());
    let (header, rows, _) = parse_csv(&stdout(&csv_out));
    let mut json_args = args.to_vec();
    json_args.extend_from_slice(&["--format", "json"]);
    let json_out = kaclab(&json_args);
    assert!(json_out.status.success());
    let doc: serde_json::Value = serde_json::from_str(&stdout(&json_out)).unwrap();
    let json_rows = doc["rows"].as_array().unwrap();
    assert_eq!(json_rows.len(), rows.len());
    for name in ["log_zn", "oracle", "rel_delta", "config_hash", "grid_hash"] {
        assert_eq!(
            json_rows[0][name].as_str().unwrap(),
            field(&header, &rows[0], name),
            "cell {name} diverges between formats"
        );
    }
    assert_eq!(doc["schema"].as_str().unwrap(), "zn/v1");
}

#[test]
fn out_flag_writes_the_table_to_a_file() {
    let dir = std::env::temp_dir().join("kaclab-cli-test-out");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("zn.csv");
    let _ = std::fs::remove_file(&path);
    let out = kaclab(&[
        "zn", "--N", "8", "--maxwellian-a", "0.25", "--out", path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(stdout(&out).is_empty());
    let body = std::fs::read_to_string(&path).unwrap();
    let (header, rows, _) = parse_csv(&body);
    assert_eq!(rows.len(), 1);
    assert!(field(&header, &rows[0], "error").is_empty());
    std::fs::remove_file(&path).ok();
}
