use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use redwave::cli::trace;

const SMALL: &str = r#"
[region]
shape = "square"
side = 16.0

[agents]
n = 256

[protocol]
radius = 3.0
seed = 7

[mobility]
mode = "standard"
rho = 1.0

[instrumentation]
cells = true
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_redwave"));
    c.env_remove("REDWAVE_SEED");
    c
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn run_json(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("run.json")).unwrap()).unwrap()
}

#[test]
fn run_writes_trace_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let out = tmp.path().join("out");
    let o = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let recs = trace::read_ndjson(std::io::BufReader::new(std::fs::File::open(out.join("trace.ndjson")).unwrap())).unwrap();
    assert_eq!(recs[0].step, 0);
    assert!(recs.iter().all(|r| r.white + r.red + r.black == 256));
    assert_eq!(run_json(&out)["seed"], 7);
}

#[test]
fn seed_precedence_is_flag_then_env_then_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let seed_of = |env: Option<&str>, flag: Option<&str>| {
        let out = tempfile::tempdir().unwrap();
        let mut c = bin();
        c.args(["run", "--config"]).arg(&cfg).arg("--out").arg(out.path());
        if let Some(e) = env {
            c.env("REDWAVE_SEED", e);
        }
        if let Some(f) = flag {
            c.args(["--seed", f]);
        }
        let o = c.output().unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        run_json(out.path())["seed"].as_u64().unwrap()
    };
    assert_eq!(seed_of(None, None), 7);
    assert_eq!(seed_of(Some("11"), None), 11);
    assert_eq!(seed_of(Some("11"), Some("13")), 13);
}

#[test]
fn bad_seed_env_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let o = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .env("REDWAVE_SEED", "abc")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("E_SEED_ENV"));
}

#[test]
fn config_errors_exit_2_with_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        (SMALL.replace("seed = 7", "seed = 7\nbogus = 1"), "E_UNKNOWN_KEY"),
        (SMALL.replace("n = 256", ""), "E_MISSING_KEY"),
        (SMALL.replace("side = 16.0", "side = -1.0"), "E_GEOMETRY"),
        ("not toml [".to_string(), "E_PARSE"),
        (SMALL.replace("rho = 1.0", "rho = 1.0\nregime = \"sec4\""), "E_REGIME"),
    ];
    for (i, (body, want)) in cases.iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("c{i}.toml"), body);
        let o = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
        let err = String::from_utf8_lossy(&o.stderr);
        assert_eq!(code(&o), 2, "case {i}: {err}");
        assert!(err.contains(want), "case {i}: {err}");
    }
}

#[test]
fn missing_config_is_an_io_error() {
    let o = bin()
        .args(["run", "--config", "/nonexistent/redwave.toml"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 4);
}

#[test]
fn expect_completion_fails_on_a_dead_run() {
    let tmp = tempfile::tempdir().unwrap();
    let body = SMALL
        .replace("radius = 3.0", "radius = 0.0")
        .replace("cells = true", "cells = false");
    let cfg = write_config(tmp.path(), "c.toml", &body);
    let base = || {
        let mut c = bin();
        c.args(["run", "--config"]).arg(&cfg);
        c
    };
    assert_eq!(code(&base().output().unwrap()), 0);
    assert_eq!(code(&base().arg("--expect-completion").output().unwrap()), 3);
}

#[test]
fn stdout_trace_matches_file_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let o = bin()
        .args(["run", "--format", "csv", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let out = tmp.path().join("out");
    bin()
        .args(["run", "--format", "csv", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.stdout, std::fs::read(out.join("trace.csv")).unwrap());
}

#[test]
fn audit_accepts_honest_traces_and_flags_tampered_ones() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    for fmt in ["ndjson", "csv"] {
        let out = tmp.path().join(fmt);
        let o = bin()
            .args(["run", "--dump-cells", "each", "--format", fmt, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0);
        let path = out.join(format!("trace.{fmt}"));
        let o = bin().arg("audit").arg(&path).output().unwrap();
        let text = String::from_utf8_lossy(&o.stdout);
        assert_eq!(code(&o), 0, "{text}");
        assert!(!text.contains("mismatch"));

        // flip the first step's regularity flag
        let recs = match fmt {
            "csv" => trace::read_csv(std::fs::File::open(&path).unwrap()).unwrap(),
            _ => trace::read_ndjson(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap(),
        };
        let mut bad = recs.clone();
        bad[0].regular = bad[0].regular.map(|r| !r);
        let f = if fmt == "csv" { trace::Format::Csv } else { trace::Format::Ndjson };
        let mut buf = Vec::new();
        trace::write(&mut buf, f, &bad).unwrap();
        std::fs::write(&path, buf).unwrap();
        let o = bin().arg("audit").arg(&path).output().unwrap();
        assert_eq!(code(&o), 3);
        assert!(String::from_utf8_lossy(&o.stdout).contains("mismatch: step 0: regular"));
    }
}

#[test]
fn sweep_summary_normalizations_recompute() {
    let tmp = tempfile::tempdir().unwrap();
    let body = format!(
        "{}\n[experiment]\nreplicas = 3\nl = [12.0, 16.0]\n",
        SMALL.replace("cells = true", "cells = false")
    );
    let cfg = write_config(tmp.path(), "c.toml", &body);
    let out = tmp.path().join("out");
    let o = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut rd = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let head = rd.headers().unwrap().clone();
    let col = |name: &str| head.iter().position(|h| h == name).unwrap();
    let rows: Vec<_> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.iter().filter(|r| &r[0] == "run").count(), 6);
    assert_eq!(rows.iter().filter(|r| &r[0] == "aggregate").count(), 2);
    for r in rows.iter().filter(|r| &r[0] == "run" && &r[col("status")] == "completed") {
        let f = |name: &str| r[col(name)].parse::<f64>().unwrap();
        let t = f("completion_time");
        let d = f("diameter");
        assert!((f("size") * 2f64.sqrt() - d).abs() < 1e-9);
        assert!((t * f("radius") / d - f("t_r_over_d")).abs() < 1e-12);
        assert!((t * f("rho") / d - f("t_rho_over_d")).abs() < 1e-12);
    }
    let sweep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(sweep["points"].as_array().unwrap().len(), 2);
}

#[test]
fn sweep_without_experiment_table_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let o = bin().args(["sweep", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn isolated_writes_counts_and_threshold_report() {
    let tmp = tempfile::tempdir().unwrap();
    let body = SMALL
        .replace("radius = 3.0", "radius = 0.5")
        .replace("rho = 1.0", "rho = 0.5")
        .replace("cells = true", "cells = false");
    let cfg = write_config(tmp.path(), "c.toml", &body);
    let out = tmp.path().join("out");
    let o = bin()
        .args(["isolated", "--trials", "5", "--flood-trials", "3", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv::Reader::from_path(out.join("isolated.csv")).unwrap().records().count();
    assert_eq!(rows, 5);
    assert!(out.join("threshold.json").exists());
}

#[test]
fn presets_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets");
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        redwave::cli::parse_config(&p, None).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}
