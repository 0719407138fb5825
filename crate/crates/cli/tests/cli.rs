use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_otcmm");

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/small.toml")
}

fn otcmm(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = otcmm(args);
    assert!(
        out.status.success(),
        "otcmm {args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = otcmm(args);
    assert!(!out.status.success(), "otcmm {args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn pipeline(dir: &Path) {
    let cfg = fixture();
    let cfg = cfg.to_str().unwrap();
    let out = dir.to_str().unwrap();
    for sub in ["validate", "factors", "solve", "quotes", "simulate", "adjust"] {
        ok(&[sub, "--config", cfg, "--out-dir", out]);
    }
}

fn text_artifacts(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "ndjson" | "bin")))
        .collect();
    v.sort();
    v
}

#[test]
fn pipeline_is_byte_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    let fa = text_artifacts(a.path());
    let fb = text_artifacts(b.path());
    assert!(fa.len() >= 12, "{fa:?}");
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert!(std::fs::read(x).unwrap() == std::fs::read(y).unwrap(), "{} differs", x.display());
    }
}

#[test]
fn every_output_references_its_manifest() {
    let d = tempfile::tempdir().unwrap();
    pipeline(d.path());
    let mut checked = 0;
    for entry in std::fs::read_dir(d.path()).unwrap() {
        let p = entry.unwrap().path();
        let name = p.file_name().unwrap().to_str().unwrap().to_string();
        if !name.ends_with(".manifest.json") {
            continue;
        }
        let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        let hash = m["manifest_hash"].as_str().unwrap();
        assert!(m["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
        assert_eq!(m["seed"], 5);
        assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
        for art in m["artifacts"].as_array().unwrap() {
            let art = art.as_str().unwrap();
            let text = std::fs::read(d.path().join(art)).unwrap();
            if art.ends_with(".csv") {
                let mut r = csv::Reader::from_reader(text.as_slice());
                let headers = r.headers().unwrap().clone();
                assert_eq!(headers.iter().next_back(), Some("manifest"), "{art}");
                for rec in r.records() {
                    assert_eq!(rec.unwrap().iter().next_back(), Some(hash), "{art}");
                }
            } else if art.ends_with(".ndjson") {
                for line in std::str::from_utf8(&text).unwrap().lines() {
                    let v: serde_json::Value = serde_json::from_str(line).unwrap();
                    assert_eq!(v["manifest"], hash, "{art}");
                }
            }
            checked += 1;
        }
    }
    assert!(checked >= 11, "checked {checked}");
}

#[test]
fn consumers_reuse_the_cached_surface() {
    let d = tempfile::tempdir().unwrap();
    let cfg = fixture();
    let (cfg, out) = (cfg.to_str().unwrap(), d.path().to_str().unwrap());
    ok(&["solve", "--config", cfg, "--out-dir", out]);
    let before = std::fs::metadata(d.path().join("surface.bin")).unwrap().modified().unwrap();
    for sub in ["quotes", "simulate", "adjust"] {
        let stdout = ok(&[sub, "--config", cfg, "--out-dir", out]);
        assert!(stdout.contains("cache hit"), "{sub}: {stdout}");
        let m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(d.path().join(format!("{sub}.manifest.json"))).unwrap()).unwrap();
        assert_eq!(m["surfaces"][0]["cache_hit"], true);
        let solve: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(d.path().join("solve.manifest.json")).unwrap()).unwrap();
        assert_eq!(m["surfaces"][0]["key"], solve["surfaces"][0]["key"]);
    }
    let after = std::fs::metadata(d.path().join("surface.bin")).unwrap().modified().unwrap();
    assert_eq!(before, after);
}

#[test]
fn missing_cache_is_actionable() {
    let d = tempfile::tempdir().unwrap();
    let cfg = fixture();
    let err = fails(&["quotes", "--config", cfg.to_str().unwrap(), "--out-dir", d.path().to_str().unwrap()]);
    assert!(err.contains("no cached surface"), "{err}");
    assert!(err.contains("otcmm solve"), "{err}");
}

#[test]
fn stale_cache_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    let cfg = fixture();
    let (cfg, out) = (cfg.to_str().unwrap(), d.path().to_str().unwrap());
    ok(&["solve", "--config", cfg, "--out-dir", out]);
    let err = fails(&["simulate", "--config", cfg, "--out-dir", out, "--grid", "31"]);
    assert!(err.contains("different market/solver configuration"), "{err}");
    // the seed does not enter the surface key
    ok(&["simulate", "--config", cfg, "--out-dir", out, "--seed", "9", "--paths", "20"]);
}

#[test]
fn corrupt_cache_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    let cfg = fixture();
    let (cfg, out) = (cfg.to_str().unwrap(), d.path().to_str().unwrap());
    ok(&["solve", "--config", cfg, "--out-dir", out]);
    let p = d.path().join("surface.bin");
    let mut bytes = std::fs::read(&p).unwrap();
    let n = bytes.len();
    bytes[n / 2] ^= 0xff;
    std::fs::write(&p, bytes).unwrap();
    let err = fails(&["adjust", "--config", cfg, "--out-dir", out]);
    assert!(err.contains("checksum"), "{err}");
}

#[test]
fn unknown_keys_fail_with_the_key_name() {
    let d = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture()).unwrap().replace("seed = 5", "seed = 5\nsede = 6");
    let cfg = write_config(d.path(), &text);
    let err = fails(&["validate", "--config", cfg.to_str().unwrap(), "--out-dir", d.path().to_str().unwrap()]);
    assert!(err.contains("sede"), "{err}");
}

#[test]
fn invalid_units_fail() {
    let d = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture()).unwrap().replace("horizon_days = 1.0", "horizon_days = -1.0");
    let cfg = write_config(d.path(), &text);
    let err = fails(&["solve", "--config", cfg.to_str().unwrap(), "--out-dir", d.path().to_str().unwrap()]);
    assert!(err.contains("horizon_days") && err.contains("days"), "{err}");
    let err = fails(&[
        "solve",
        "--config",
        fixture().to_str().unwrap(),
        "--out-dir",
        d.path().to_str().unwrap(),
        "--dt",
        "5",
    ]);
    assert!(err.contains("dt_days"), "{err}");
}

#[test]
fn out_of_range_correlation_fails_validate() {
    let d = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture()).unwrap().replace("0.9], [0.9", "1.5], [1.5");
    let cfg = write_config(d.path(), &text);
    let err = fails(&["validate", "--config", cfg.to_str().unwrap(), "--out-dir", d.path().to_str().unwrap()]);
    assert!(err.contains("correlation"), "{err}");
}

#[test]
fn missing_config_flag_is_reported() {
    let err = fails(&["solve"]);
    assert!(err.contains("--config"), "{err}");
}

#[test]
fn reproduce_stages_share_the_cache() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    let coarse = ["--grid", "21", "--out-dir", out];
    let solve = ok(&[&["reproduce", "paper-2asset", "--stage", "solve"], &coarse[..]].concat());
    assert!(solve.contains("θ̃(0,0)"), "{solve}");
    assert!(d.path().join("surface.bin").exists() && d.path().join("surface_1f.bin").exists());
    let sim = ok(&[&["reproduce", "paper-2asset", "--stage", "simulate", "--paths", "40"], &coarse[..]].concat());
    assert!(sim.contains("cache hit"), "{sim}");
    let tables = std::fs::read_to_string(d.path().join("tables.csv")).unwrap();
    assert_eq!(tables.lines().count(), 4);
    assert!(tables.lines().nth(2).unwrap().starts_with("T2,myopic"));
    // a different grid is a different surface
    let err = fails(&["reproduce", "paper-2asset", "--stage", "adjust", "--grid", "31", "--out-dir", out]);
    assert!(err.contains("reproduce paper-2asset --stage solve"), "{err}");
}
