use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hflow")).args(args).output().expect("spawn hflow")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p
}

const LINE: &str = r#"{
  "id": "line_small",
  "grid": { "n": 1, "points": 16 },
  "metric": { "kind": "flat" },
  "bundle": { "rank": 2, "theta": [[["0.5", "0.2"], ["0", "-0.5"]]],
              "perturbation": { "amplitude": 0.1, "kind": "hermitian" } },
  "flow": { "dt": 1e-4, "max_steps": 60, "stop_y": 0.0, "record_every": 1, "functional_quadrature_nodes": 8 },
  "seed": 4
}"#;

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--config", config.to_str().unwrap(), "--out-dir", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    hflow(&args)
}

#[test]
fn malformed_config_names_field_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &LINE.replace(r#""points": 16"#, r#""points": -3"#));
    let out = run(&cfg, &dir.path().join("o"), &[]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("grid.points"), "{err}");

    let cfg = write_config(dir.path(), &LINE.replace("\"0.2\"", "\"sin(x5)\""));
    let out = run(&cfg, &dir.path().join("o"), &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bundle.theta[0][0][1]"));

    let out = hflow(&["run", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn run_writes_series_snapshot_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), LINE);
    let o = dir.path().join("o");
    let out = run(&cfg, &o, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let series = std::fs::read_to_string(o.join("series.csv")).unwrap();
    let mut lines = series.lines();
    assert_eq!(lines.next().unwrap(), "t,Y,M,sup_LF,logdet_max,eigmin,eigmax,Dprime_norm,trace_h_sup");
    assert_eq!(lines.count(), 61);
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(o.join("final.json")).unwrap()).unwrap();
    assert_eq!(meta["step"], 60);
    let bin = std::fs::metadata(o.join("final.bin")).unwrap().len();
    assert_eq!(bin, 2 * 256 * 4 * 16);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(o.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["verdict"], "incomplete");
    assert!(report["invariants"].as_array().unwrap().iter().all(|r| r["status"] != "fail"));

    let rep = hflow(&["report", "--out-dir", o.to_str().unwrap()]);
    assert!(rep.status.success());
    let text = String::from_utf8_lossy(&rep.stdout);
    assert!(text.contains("line_small") && text.contains("max_principle"), "{text}");
}

#[test]
fn reruns_are_bit_identical_and_resume_matches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), LINE);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&cfg, &a, &[]).status.success());
    assert!(run(&cfg, &b, &[]).status.success());
    for f in ["series.csv", "final.bin", "report.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    // 40 steps, then 20 more from the snapshot
    let (first, second) = (dir.path().join("first"), dir.path().join("second"));
    assert!(run(&cfg, &first, &["--max-steps", "40"]).status.success());
    let snap = first.join("final.json");
    assert!(run(&cfg, &second, &["--max-steps", "20", "--resume", snap.to_str().unwrap()]).status.success());
    assert_eq!(std::fs::read(a.join("final.bin")).unwrap(), std::fs::read(second.join("final.bin")).unwrap());
}

#[test]
fn seed_flag_changes_the_start() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), LINE);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&cfg, &a, &["--max-steps", "1"]).status.success());
    assert!(run(&cfg, &b, &["--max-steps", "1", "--seed", "9"]).status.success());
    assert_ne!(std::fs::read(a.join("final.bin")).unwrap(), std::fs::read(b.join("final.bin")).unwrap());
}

#[test]
fn record_every_thins_the_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), LINE);
    let o = dir.path().join("o");
    assert!(run(&cfg, &o, &["--record-every", "20"]).status.success());
    let series = std::fs::read_to_string(o.join("series.csv")).unwrap();
    assert_eq!(series.lines().count(), 1 + 4);
}

#[test]
fn verify_flat_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), LINE);
    let out = hflow(&["verify", "--config", cfg.to_str().unwrap()]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}\n{}", String::from_utf8_lossy(&out.stderr));
    for name in ["torsion_one_form", "gauduchon_torsion", "det_conservation", "max_principle", "y_identity", "m_derivative"] {
        let line = text.lines().find(|l| l.starts_with(name)).unwrap_or_else(|| panic!("{name} missing\n{text}"));
        assert!(line.contains("pass"), "{line}");
    }
}
