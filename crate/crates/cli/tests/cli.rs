use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const QUICK: &str = r#"
preset = "blobs3"
samples = 120

[pipeline]
seed = 3

[pipeline.encoder]
hidden = [16]
latent_dim = 8

[pipeline.train]
epochs = 3

[pipeline.adapt]
steps = 20

[pipeline.estimator]
repeats = 2
"#;

fn smuda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smuda")).args(args).output().expect("spawn smuda")
}

fn ok(args: &[&str]) -> String {
    let out = smuda(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn quick_config(dir: &Path) -> PathBuf {
    let p = dir.join("quick.toml");
    std::fs::write(&p, QUICK).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run_into(cfg: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["run", "--config", s(cfg), "--out", s(out)];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn runs_are_byte_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = quick_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_into(&cfg, &a, &[]);
    run_into(&cfg, &b, &["--workers", "0"]);
    for f in ["report.csv", "metrics.csv", "bound.csv", "predictions.csv", "ensemble.bin", "trace_0.csv", "embeddings_2.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn distributed_mode_matches_local_and_logs_transcript() {
    let tmp = TempDir::new().unwrap();
    let cfg = quick_config(tmp.path());
    let (local, dist) = (tmp.path().join("local"), tmp.path().join("dist"));
    run_into(&cfg, &local, &[]);
    run_into(&cfg, &dist, &["--mode", "distributed"]);
    assert_eq!(std::fs::read(local.join("report.csv")).unwrap(), std::fs::read(dist.join("report.csv")).unwrap());
    let log = std::fs::read_to_string(dist.join("transcript.log")).unwrap();
    assert_eq!(log.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()).count(), 24);
    let audit = std::fs::read_to_string(dist.join("audit.csv")).unwrap();
    assert!(audit.contains("passed,true"), "{audit}");
}

#[test]
fn single_best_weighting_is_reported() {
    let tmp = TempDir::new().unwrap();
    let cfg = quick_config(tmp.path());
    let out = tmp.path().join("best");
    run_into(&cfg, &out, &["--weighting", "single-best"]);
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let mut r = csv::Reader::from_reader(report.as_bytes());
    let h = r.headers().unwrap().clone();
    let wi = h.iter().position(|c| c == "weight").unwrap();
    let mut weights: Vec<f64> = r.records().map(|rec| rec.unwrap()[wi].parse().unwrap()).collect();
    weights.sort_by(f64::total_cmp);
    assert_eq!(weights, vec![0.0, 0.0, 1.0]);
    assert!(report.contains("single-best"));
}

#[test]
fn baselines_write_the_same_artifacts() {
    let tmp = TempDir::new().unwrap();
    let cfg = quick_config(tmp.path());
    for kind in ["direct", "source-combined"] {
        let out = tmp.path().join(kind);
        ok(&["baseline", kind, "--config", s(&cfg), "--out", s(&out)]);
        for f in ["report.csv", "metrics.csv", "bound.csv", "ensemble.bin"] {
            assert!(out.join(f).exists(), "{kind}: {f}");
        }
    }
    let out = smuda(&["baseline", "direct", "--config", s(&cfg), "--mode", "distributed", "--out", s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exit_codes_separate_config_and_runtime_errors() {
    let tmp = TempDir::new().unwrap();
    let cfg = quick_config(tmp.path());
    let out = tmp.path().join("o");
    // Configuration problems.
    for args in [
        vec!["run", "--config", s(&cfg), "--xi", "0", "--out", s(&out)],
        vec!["run", "--config", s(&cfg), "--weighting", "bogus", "--out", s(&out)],
        vec!["run", "--preset", "nope", "--out", s(&out)],
        vec!["run", "--bogus-flag"],
        vec!["gen", "--preset", "nope", "--out", s(&out)],
    ] {
        assert_eq!(smuda(&args).status.code(), Some(1), "{args:?}");
    }
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "presett = \"blobs3\"").unwrap();
    assert_eq!(smuda(&["run", "--config", s(&bad)]).status.code(), Some(1));

    // Runtime problems: missing and malformed inputs.
    let missing = tmp.path().join("missing.smft");
    assert_eq!(smuda(&["run", "--source", s(&missing), "--target", s(&missing), "--out", s(&out)]).status.code(), Some(2));
    let junk = tmp.path().join("junk.log");
    std::fs::write(&junk, "not a transcript\n").unwrap();
    assert_eq!(smuda(&["audit", "--transcript", s(&junk), "--data", s(&missing)]).status.code(), Some(2));
}

#[test]
fn gen_run_from_files_eval_and_bound() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let listing = ok(&["gen", "--seed", "4", "--samples", "80", "--out", s(&data)]);
    assert_eq!(listing.lines().count(), 4);
    let csv_dir = tmp.path().join("csv");
    ok(&["gen", "--seed", "4", "--samples", "80", "--csv", "--out", s(&csv_dir)]);
    assert!(csv_dir.join("target.csv").exists());

    let cfg = tmp.path().join("files.toml");
    let body = QUICK.replace("preset = \"blobs3\"\nsamples = 120\n", "");
    std::fs::write(&cfg, body).unwrap();
    let out = tmp.path().join("run");
    let mut args = vec!["run".to_string(), "--config".into(), s(&cfg).into(), "--out".into(), s(&out).into()];
    for k in 0..3 {
        args.push("--source".into());
        args.push(s(&data.join(format!("source{k}.smft"))).into());
    }
    args.push("--target".into());
    args.push(s(&data.join("target.smft")).into());
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());

    // Evaluating the saved ensemble reproduces the run's accuracy.
    let eval = ok(&["eval", "--ensemble", s(&out.join("ensemble.bin")), "--data", s(&data.join("target.smft"))]);
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let acc = metrics.lines().find_map(|l| l.strip_prefix("accuracy,")).unwrap();
    assert!(eval.contains(&format!("accuracy {acc}")), "{eval} vs {acc}");
    assert!(eval.contains("jensen_holds true"));

    // Recomputing the bound from the report reproduces bound.csv.
    let again = tmp.path().join("bound.csv");
    ok(&["bound", "--run", s(&out), "--out", s(&again)]);
    assert_eq!(std::fs::read(out.join("bound.csv")).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn audit_flags_planted_canaries_only_when_leaked() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    ok(&["gen", "--seed", "5", "--samples", "60", "--canaries", "--out", s(&data)]);
    let cfg = tmp.path().join("files.toml");
    std::fs::write(&cfg, QUICK.replace("preset = \"blobs3\"\nsamples = 120\n", "")).unwrap();
    let out = tmp.path().join("run");
    let files: Vec<PathBuf> = (0..3).map(|k| data.join(format!("source{k}.smft"))).collect();
    let target = data.join("target.smft");
    ok(&[
        "run", "--config", s(&cfg), "--mode", "distributed", "--out", s(&out),
        "--source", s(&files[0]), "--source", s(&files[1]), "--source", s(&files[2]), "--target", s(&target),
    ]);
    let audit = ok(&[
        "audit", "--transcript", s(&out.join("transcript.log")),
        "--data", s(&files[0]), "--data", s(&files[1]), "--data", s(&files[2]), "--data", s(&target),
    ]);
    assert!(audit.contains("canaries: 4"), "{audit}");
    assert!(audit.trim_end().ends_with("PASS"));

    // Copy a source row into the log as if it had been sent.
    let log = std::fs::read_to_string(out.join("transcript.log")).unwrap();
    let ds = smuda_core::data::read_features(&files[0]).unwrap();
    let bytes: Vec<u8> = ds.features.row(0).iter().flat_map(|v| v.to_le_bytes()).collect();
    let tampered = tamper_first_model_message(&log, &bytes);
    let bad = tmp.path().join("tampered.log");
    std::fs::write(&bad, tampered).unwrap();
    let out = smuda(&["audit", "--transcript", s(&bad), "--data", s(&files[0])]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("source0"));
}

/// Overwrite the tail of the first model message with `bytes`, keeping its
/// framing valid so the log still parses.
fn tamper_first_model_message(log: &str, bytes: &[u8]) -> String {
    let hex: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
    let mut done = false;
    log.lines()
        .map(|line| {
            if done || !line.contains("model") {
                return line.to_string();
            }
            done = true;
            let cut = line.len() - hex.len() - 16;
            format!("{}{}{}", &line[..cut], hex, &line[cut + hex.len()..])
        })
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}
