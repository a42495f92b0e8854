use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SCENE: &str = r#"{
  "camera": {"modulation_frequency_hz": 16e6, "rows": 64, "cols": 80},
  "medium": {"beta": 3.2e-4, "g": 0.9, "z0": 10},
  "flip_row": 30,
  "objects": [
    {"name": "box", "shape": "rect", "top": 8, "left": 10, "bottom": 22, "right": 26, "depth_mm": 1300},
    {"name": "ball", "shape": "disc", "center_row": 44, "center_col": 58, "radius": 7, "depth_mm": 1700}
  ]
}"#;

const OVERRIDES: [&str; 8] = [
    "--amp-set",
    "flip_row=30",
    "--amp-set",
    "excluded_bottom_rows=3",
    "--phase-set",
    "flip_row=30",
    "--phase-set",
    "excluded_bottom_rows=3",
];

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tofdefog"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn tofdefog")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let scene = dir.path().join("scene.json");
        fs::write(&scene, SCENE).unwrap();
        ok(&["synth", "--scene", s(&scene), "--out", s(&dir.path().join("syn"))]);
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn defog(&self, out: &str, extra: &[&str]) -> Output {
        let (amp, phase, out) = (
            self.path("syn/foggy_amplitude.tofgrid"),
            self.path("syn/foggy_phase.tofgrid"),
            self.path(out),
        );
        let mut args = vec!["defog", "--amp", s(&amp), "--phase", s(&phase), "--out", s(&out)];
        args.extend_from_slice(&OVERRIDES);
        args.extend_from_slice(extra);
        bin().args(&args).output().unwrap()
    }
}

fn grid_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "tofgrid"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn synth_writes_ground_truth_and_manifest() {
    let f = Fixture::new();
    for name in [
        "foggy_amplitude",
        "foggy_phase",
        "clean_depth",
        "scattering_amplitude",
        "scattering_phase",
        "mask",
        "labels",
    ] {
        assert!(f.path(&format!("syn/{name}.tofgrid")).exists(), "{name}");
    }
    let names: Value = serde_json::from_slice(&fs::read(f.path("syn/labels.json")).unwrap()).unwrap();
    assert_eq!(names["1"], "box");
    assert_eq!(names["2"], "ball");
    let manifest: Value = serde_json::from_slice(&fs::read(f.path("syn/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["outputs"]["foggy_amplitude"]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn defog_then_eval_reduces_error() {
    let f = Fixture::new();
    let out = f.defog("run", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "scattering_amplitude",
        "scattering_phase",
        "weight_amplitude",
        "weight_phase",
        "mask",
        "depth",
        "raw_depth",
        "direct_amplitude",
        "direct_phase",
    ] {
        assert!(f.path(&format!("run/{name}.tofgrid")).exists(), "{name}");
    }
    let manifest: Value = serde_json::from_slice(&fs::read(f.path("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["amplitude"]["flip_row"], 30);
    assert!(manifest["iterations"]["amplitude.coarse"].as_u64().unwrap() >= 1);
    assert!(!manifest["objective_histories"]["phase.fine"].as_array().unwrap().is_empty());
    assert!(manifest["inputs"]["amp"]["path"].as_str().unwrap().starts_with('/'));

    let stdout = ok(&["eval", "--est", s(&f.path("run")), "--gt", s(&f.path("syn"))]);
    assert!(stdout.starts_with("method,box,ball,overall\n"), "{stdout}");
    let report: Value = serde_json::from_slice(&fs::read(f.path("run/report.json")).unwrap()).unwrap();
    let defogged = report["overall_defogged_mm"].as_f64().unwrap();
    let raw = report["overall_raw_mm"].as_f64().unwrap();
    assert!(defogged < 0.2 * raw, "defogged {defogged} raw {raw}");
    assert_eq!(
        fs::read_to_string(f.path("run/report.csv")).unwrap(),
        stdout.lines().take(3).map(|l| format!("{l}\n")).collect::<String>()
    );
}

#[test]
fn repeated_runs_are_byte_identical_across_thread_counts() {
    let f = Fixture::new();
    assert!(f.defog("a", &[]).status.success());
    let b = {
        let (amp, phase, out) = (
            f.path("syn/foggy_amplitude.tofgrid"),
            f.path("syn/foggy_phase.tofgrid"),
            f.path("b"),
        );
        let mut args = vec!["defog", "--amp", s(&amp), "--phase", s(&phase), "--out", s(&out)];
        args.extend_from_slice(&OVERRIDES);
        bin().env("TOFDEFOG_THREADS", "1").args(&args).output().unwrap()
    };
    assert!(b.status.success());
    let (ga, gb) = (grid_bytes(&f.path("a")), grid_bytes(&f.path("b")));
    assert_eq!(ga.len(), 9);
    assert_eq!(ga, gb);
}

#[test]
fn replay_reproduces_and_detects_changes() {
    let f = Fixture::new();
    assert!(f.defog("run", &[]).status.success());
    let manifest = f.path("run/manifest.json");
    let stdout = ok(&["defog", "--replay", s(&manifest), "--out", s(&f.path("again"))]);
    assert!(stdout.contains("replay reproduced 9 outputs"), "{stdout}");

    // a recorded hash that no longer matches the rerun
    let mut doc: Value = serde_json::from_slice(&fs::read(&manifest).unwrap()).unwrap();
    doc["outputs"]["depth"]["sha256"] = Value::String("0".repeat(64));
    let edited = f.path("edited.json");
    fs::write(&edited, serde_json::to_vec(&doc).unwrap()).unwrap();
    let out = run(&["defog", "--replay", s(&edited), "--out", s(&f.path("again2"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("depth differs"));

    // an input that changed since the recorded run
    let amp = f.path("syn/foggy_amplitude.tofgrid");
    let mut bytes = fs::read(&amp).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&amp, bytes).unwrap();
    let out = run(&["defog", "--replay", s(&manifest), "--out", s(&f.path("again3"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("changed since the recorded run"));
}

#[test]
fn config_files_and_profiles() {
    let f = Fixture::new();
    let cfg = f.path("amp.json");
    fs::write(&cfg, r#"{"flip_row": 30, "excluded_bottom_rows": 3, "max_outer_iters": 3}"#).unwrap();
    let out = f.defog("cfg", &["--amp-config", s(&cfg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: Value = serde_json::from_slice(&fs::read(f.path("cfg/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["amplitude"]["max_outer_iters"], 3);
    assert!(manifest["iterations"]["amplitude.coarse"].as_u64().unwrap() <= 3);
    // the file's profile defaults to the command-line profile
    assert_eq!(manifest["config"]["amplitude"]["gamma3"], 10.0);

    let out = f.defog("bad", &["--amp-profile", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
    let out = f.defog("bad", &["--amp-set", "gamma9=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes_and_json_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.tofgrid");
    let out = run(&["--json", "defog", "--amp", s(&missing), "--phase", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "io");
    assert_eq!(err["error"]["exit_code"], 2);
    assert!(err["error"]["message"].as_str().unwrap().contains("missing.tofgrid"));

    // header promises 4x4 f32 but the payload is short
    let header = br#"{"magic":"TOFGRID","version":1,"rows":4,"cols":4,"dtype":"f32","units":"sensor","domain":"amplitude"}"#;
    let mut bytes = header.to_vec();
    bytes.push(0);
    bytes.extend_from_slice(&[0u8; 59]);
    let truncated = dir.path().join("short.tofgrid");
    fs::write(&truncated, bytes).unwrap();
    let out = run(&["defog", "--amp", s(&truncated), "--phase", s(&truncated), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(4));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("59") && msg.contains("64"), "{msg}");

    let out = run(&["--json", "defog", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "usage");

    let out = bin()
        .env("TOFDEFOG_THREADS", "zero")
        .args(["simrange", "--out", s(&dir.path().join("r.csv"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(run(&["--help"]).status.success());
}

#[test]
fn simrange_writes_curves_and_script() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curves/range.csv");
    let gp = dir.path().join("range.gp");
    let stdout = ok(&[
        "simrange",
        "--beta",
        "3.2e-4",
        "--g",
        "0.9",
        "--z0",
        "10",
        "--freq",
        "16e6",
        "--I",
        "1",
        "--out",
        s(&csv),
        "--gnuplot",
        s(&gp),
    ]);
    assert!(stdout.contains("z_background 2650 mm"), "{stdout}");
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("z_mm,alpha_s,phi_s,residual_amp,residual_phase\n"));
    assert_eq!(text.lines().count(), 1001);
    assert!(fs::read_to_string(&gp).unwrap().contains(s(&csv)));

    let clear = ok(&["simrange", "--beta", "0", "--out", s(&csv)]);
    assert!(clear.contains("z_background unbounded"), "{clear}");
    assert_eq!(run(&["simrange", "--beta", "-1", "--out", s(&csv)]).status.code(), Some(2));
}

#[test]
fn preprocess_smooths_and_rejects_depth() {
    let f = Fixture::new();
    let input = f.path("syn/foggy_amplitude.tofgrid");
    let out = f.path("smooth.tofgrid");
    ok(&["preprocess", "--in", s(&input), "--out", s(&out), "--method", "gaussian", "--sigma", "1.5"]);
    assert_ne!(fs::read(&out).unwrap(), fs::read(&input).unwrap());
    ok(&["preprocess", "--in", s(&input), "--out", s(&out), "--method", "none"]);
    assert_eq!(fs::read(&out).unwrap(), fs::read(&input).unwrap());
    let depth = f.path("syn/clean_depth.tofgrid");
    assert_eq!(
        run(&["preprocess", "--in", s(&depth), "--out", s(&out)]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["preprocess", "--in", s(&input), "--out", s(&out), "--method", "bilateral"]).status.code(),
        Some(2)
    );
}
