use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gcc-kit"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn spectrum_of_interval_starts_at_pi_squared() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("interval.toml");
    let o = run(&["spectrum", "--config", cfg.to_str().unwrap(), "--count", "5"], dir.path());
    assert!(o.status.success(), "{}", text(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("interval_spectrum.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "index,lambda,omega");
    assert_eq!(lines.len(), 6);
    let l1: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!((l1 / std::f64::consts::PI.powi(2) - 1.0).abs() < 1e-3, "{l1}");
    let rep = read_json(&dir.path().join("interval_spectrum.json"));
    assert_eq!(rep["overrides"]["count"], 5);
    assert_eq!(rep["config"]["spectrum"]["count"], 5);
}

#[test]
fn square_strip_fails_with_a_bouncing_ball_witness() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("square_strip.toml");
    let o = run(&["gcc", "--config", cfg.to_str().unwrap(), "--time", "10"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", text(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("square_strip_gcc_witnesses.csv")).unwrap();
    assert!(csv.lines().count() > 1);
    let rep = read_json(&dir.path().join("square_strip_gcc.json"));
    assert_eq!(rep["result"]["verdict"], "fails");
    let vertical = rep["result"]["witnesses"].as_array().unwrap().iter().any(|w| {
        let x = w["initial"]["x"][0].as_f64().unwrap();
        let xi = w["initial"]["xi"][0].as_f64().unwrap();
        x >= 0.3 && xi.abs() < 1e-12
    });
    assert!(vertical);
    assert!(dir.path().join("square_strip_gcc_witnesses.svg").exists());
}

#[test]
fn trace_on_disc_writes_chords() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("disc.toml");
    let o = run(&["trace", "--config", cfg.to_str().unwrap(), "--init", "x=0,0;dir=30deg", "--time", "3"], dir.path());
    assert!(o.status.success(), "{}", text(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("disc_trace.csv")).unwrap();
    assert!(csv.starts_with("ray,branch,s,t,x,y,tau,xi,eta,tag"));
    assert!(csv.contains("reflect"));
    let svg = std::fs::read_to_string(dir.path().join("disc_trace.svg")).unwrap();
    assert!(svg.contains("<svg") && svg.contains("polyline"));
    let rep = read_json(&dir.path().join("disc_trace.json"));
    assert!(rep["result"]["branches"][0]["n_reflections"].as_u64().unwrap() >= 1);
}

#[test]
fn reports_are_deterministic_up_to_the_timestamp() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = config("disc.toml");
    for d in [&a, &b] {
        let o = run(&["gcc", "--config", cfg.to_str().unwrap(), "--jobs", "2"], d.path());
        assert!(o.status.success(), "{}", text(&o.stderr));
    }
    let strip = |p: &Path| {
        let s = std::fs::read_to_string(p).unwrap();
        s.lines().filter(|l| !l.trim_start().starts_with("\"generated_unix\"")).collect::<Vec<_>>().join("\n")
    };
    assert_eq!(strip(&a.path().join("disc_gcc.json")), strip(&b.path().join("disc_gcc.json")));
}

#[test]
fn replay_reproduces_the_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("square_strip.toml");
    let o = run(&["gcc", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let report = dir.path().join("square_strip_gcc.json");
    let r = bin().arg("--replay").arg(&report).output().unwrap();
    assert_eq!(r.status.code(), Some(2), "{}", text(&r.stderr));
    assert!(text(&r.stdout).contains("reproduces"));

    // a tampered result no longer replays
    let mut v = read_json(&report);
    v["result"]["n_pass"] = 0.into();
    std::fs::write(&report, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    let r = bin().arg("--replay").arg(&report).output().unwrap();
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn malformed_config_names_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let src = std::fs::read_to_string(config("interval.toml")).unwrap().replace("count = 20", "count = 20\ncuont = 3");
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, src).unwrap();
    let o = run(&["spectrum", "--config", p.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = text(&o.stderr);
    assert!(err.contains("cuont") && err.contains("line"), "{err}");
}

#[test]
fn irrelevant_flags_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("interval.toml");
    let o = run(&["spectrum", "--config", cfg.to_str().unwrap(), "--init", "x=0.5;dir=1"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("--init"));
}

#[test]
fn tgcc_and_divide_and_packet_measure() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["tgcc", "--config", config("interval.toml").to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", text(&o.stderr));
    let t = read_json(&dir.path().join("interval_tgcc.json"))["result"]["t_gcc"].as_f64().unwrap();
    assert!((t - 0.8).abs() < 0.05, "{t}");

    let o = run(&["divide", "--config", config("divide.toml").to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", text(&o.stderr));
    let rows = read_json(&dir.path().join("divide_divide.json"))["result"].as_array().unwrap().clone();
    assert_eq!(rows.len(), 9);
    for r in rows.iter().filter(|r| !r["max_residual"].is_null()) {
        assert!(r["max_residual"].as_f64().unwrap() < 1e-10);
    }

    let o = run(&["measure", "--config", config("measure_packet.toml").to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", text(&o.stderr));
    let rel = read_json(&dir.path().join("packet_measure.json"))["result"]["relative_error"].as_f64().unwrap();
    assert!(rel < 0.05, "{rel}");
    assert!(dir.path().join("packet_measure.svg").exists());
}
