//! End-to-end tests of the `ubood` binary on tiny runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = "\
schema_version = 1
environment = \"gridworld\"
version = \"UB-B07\"
hidden = 16
episodes = 4
warmup_steps = 20
batch_size = 8
snapshot_interval = 2
";

fn ubood(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ubood")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn train_tiny(dir: &Path, text: &str, out: &str) -> PathBuf {
    let cfg = write_config(dir, "run.toml", text);
    let out = dir.join(out);
    let o = ubood(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "train failed: {}", String::from_utf8_lossy(&o.stderr));
    out
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn exit_codes() {
    assert_eq!(ubood(&["--help"]).status.code(), Some(0));
    assert_eq!(ubood(&[]).status.code(), Some(1));
    assert_eq!(ubood(&["train"]).status.code(), Some(1));

    let dir = TempDir::new().unwrap();
    let bad = write_config(dir.path(), "bad.toml", "schema_version = 1\nenvironment = \"gridworld\"\nepisods = 3\n");
    let o = ubood(&["train", "--config", s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("episods"));

    let missing = dir.path().join("nope.txt");
    assert_eq!(ubood(&["eval", "--snapshot", s(&missing)]).status.code(), Some(2));
}

#[test]
fn missing_environment_is_named() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "schema_version = 1\nversion = \"UB-B10\"\n");
    let o = ubood(&["train", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("environment"));
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn prior_version_is_recorded() {
    let dir = TempDir::new().unwrap();
    let text = TINY.replace("UB-B07", "UB-BP10");
    let out = train_tiny(dir.path(), &text, "bp");
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("UB-BP10"));
    assert!(manifest.contains("prior_scale = 1.0"));
    assert!(manifest.contains("mask_probability = 1.0"));
    let snap = fs::read_to_string(out.join("snapshots/snapshot_seed0_ep000004.txt")).unwrap();
    assert!(snap.contains("network prior"));
    // Initial snapshot plus every second episode.
    assert_eq!(fs::read_dir(out.join("snapshots")).unwrap().count(), 3);
}

#[test]
fn eval_reports_requested_shifted_configs() {
    let dir = TempDir::new().unwrap();
    let run = train_tiny(dir.path(), TINY, "run");
    let out = dir.path().join("eval");
    let o = ubood(&["eval", "--snapshot", s(&run), "--configs", "0,1,5", "--episodes", "3", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let configs: Vec<String> = csv_rows(&out.join("metrics.csv")).iter().map(|r| r[3].to_string()).collect();
    assert_eq!(configs, ["1", "5"]);
    assert_eq!(csv_rows(&out.join("returns.csv")).len(), 3);
    // Three snapshots give three curve points.
    assert_eq!(csv_rows(&out.join("uncertainty_curve.csv")).len(), 3);

    let o = ubood(&["eval", "--snapshot", s(&run), "--configs", "1,5", "--out", s(&dir.path().join("e2"))]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("config"));
}

#[test]
fn classify_empty_trace_and_manifest_threshold() {
    let dir = TempDir::new().unwrap();
    let run = train_tiny(dir.path(), TINY, "run");
    let snap = run.join("snapshots/snapshot_seed0_ep000004.txt");

    let trace = dir.path().join("empty.csv");
    fs::write(&trace, ubood::env::trace_header(144).join(",") + "\n").unwrap();
    let out = dir.path().join("cls");
    let o = ubood(&["classify", "--snapshot", s(&snap), "--trace", s(&trace), "--episodes", "2", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let labeled = fs::read_to_string(out.join("labeled.csv")).unwrap();
    assert_eq!(labeled.lines().count(), 1);
    assert!(labeled.trim_end().ends_with("score,label"));

    let eval = dir.path().join("eval");
    let o = ubood(&[
        "eval", "--snapshot", s(&snap), "--configs", "0,3", "--episodes", "3", "--trace", "--out", s(&eval),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let traces = eval.join("traces.csv");
    let out = dir.path().join("cls2");
    let manifest = eval.join("manifest.toml");
    let o = ubood(&[
        "classify", "--snapshot", s(&snap), "--trace", s(&traces), "--manifest", s(&manifest), "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let eval_t: toml::Table = fs::read_to_string(&manifest).unwrap().parse().unwrap();
    let cls_t: toml::Table = fs::read_to_string(out.join("manifest.toml")).unwrap().parse().unwrap();
    let c_eval = eval_t["thresholds"][0]["c"].as_float().unwrap();
    let c_cls = cls_t["threshold"]["c"].as_float().unwrap();
    assert_eq!(c_eval, c_cls);

    let rows = csv_rows(&out.join("labeled.csv"));
    assert_eq!(rows.len(), csv_rows(&traces).len());
    for r in &rows {
        let score: f64 = r[r.len() - 2].parse().unwrap();
        let expected = if score > c_eval { "out_of_distribution" } else { "in_distribution" };
        assert_eq!(&r[r.len() - 1], expected);
    }
}

#[test]
fn demo_writes_one_deterministic_csv() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = ubood(&["demo-regression", "--seeds", "3", "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csvs: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    assert_eq!(csvs.len(), 1);
    assert_eq!(fs::read(a.join("toy_regression.csv")).unwrap(), fs::read(b.join("toy_regression.csv")).unwrap());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (train_tiny(dir.path(), TINY, "a"), train_tiny(dir.path(), TINY, "b"));
    for name in ["train_log_seed0.csv", "snapshots/snapshot_seed0_ep000004.txt"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }
    let (ea, eb) = (dir.path().join("ea"), dir.path().join("eb"));
    for (run, out) in [(&a, &ea), (&b, &eb)] {
        let o = ubood(&["eval", "--snapshot", s(run), "--episodes", "2", "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["metrics.csv", "returns.csv", "uncertainty_curve.csv"] {
        assert_eq!(fs::read(ea.join(name)).unwrap(), fs::read(eb.join(name)).unwrap(), "{name} differs");
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let config = ubood::config::RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(config.version.is_some());
        n += 1;
    }
    assert!(n >= 4);
}
