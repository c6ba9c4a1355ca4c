use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rsc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rsc")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn fast_config(dir: &Path) -> String {
    let out = rsc(&["preset", "fig5"]);
    assert!(out.status.success());
    let mut v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    v["envelope"] = false.into();
    v["grid_points"] = 300.into();
    v["window_pi_units"] = 1.5.into();
    let p = dir.join("fast.json");
    fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn preset_listing() {
    let out = rsc(&["preset", "--list"]);
    assert!(out.status.success());
    let s = String::from_utf8(out.stdout).unwrap();
    for n in ["fig5", "fig6", "appendixA"] {
        assert!(s.contains(n));
    }
    let f6: serde_json::Value = serde_json::from_slice(&rsc(&["preset", "fig6"]).stdout).unwrap();
    assert_eq!(f6["detuning_gamma"], -5000.0);
    assert_eq!(rsc(&["preset", "fig9"]).status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic_and_echo_reproduces() {
    let d = tempfile::tempdir().unwrap();
    let cfg = fast_config(d.path());
    let (a, b, c) = (d.path().join("a"), d.path().join("b"), d.path().join("c"));
    for out in [&a, &b] {
        assert!(rsc(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    }
    let echo = a.join("config.json");
    assert!(rsc(&["simulate", "--config", echo.to_str().unwrap(), "--out", c.to_str().unwrap()]).status.success());
    for f in ["passage_v2_2_4.csv", "summary.json", "generator.json", "config.json"] {
        let x = fs::read(a.join(f)).unwrap();
        assert_eq!(x, fs::read(b.join(f)).unwrap(), "{f}");
        assert_eq!(x, fs::read(c.join(f)).unwrap(), "{f}");
    }
    let csv = fs::read_to_string(a.join("passage_v2_2_4.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,P_base,P_dest,P_imperfection,P_leak");
    assert_eq!(csv.lines().count(), 301);
    let s: serde_json::Value = serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert!(s["balanced"]["max_p_dest"].as_f64().unwrap() > 0.95);
    assert!(fs::read_dir(&a).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
}

#[test]
fn sweep_matches_individual_runs() {
    let d = tempfile::tempdir().unwrap();
    let cfg = fast_config(d.path());
    let sw = d.path().join("sweep");
    let out = rsc(&["sweep", "--config", &cfg, "--param", "detuning_gamma", "--values=-1000,-5000", "--out", sw.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    v["detuning_gamma"] = (-5000.0).into();
    let single_cfg = d.path().join("single.json");
    fs::write(&single_cfg, v.to_string()).unwrap();
    let single = d.path().join("single");
    assert!(rsc(&["simulate", "--config", single_cfg.to_str().unwrap(), "--out", single.to_str().unwrap()]).status.success());
    for f in ["passage_v2_2_4.csv", "summary.json", "config.json"] {
        assert_eq!(fs::read(sw.join("detuning_gamma=-5000").join(f)).unwrap(), fs::read(single.join(f)).unwrap(), "{f}");
    }
    assert!(sw.join("detuning_gamma=-1000").join("summary.json").exists());
    let bad = rsc(&["sweep", "--config", &cfg, "--param", "warp_factor", "--values", "1", "--out", sw.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn protocol_reports_analytic_column() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("p");
    let r = rsc(&["protocol", "--preset", "appendixA", "--steps", "4", "--dephasing", "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(out.join("protocol.json")).unwrap()).unwrap();
    let steps = v["steps"].as_array().unwrap();
    assert_eq!(steps.len(), 5);
    for s in steps {
        let (d, z) = (s["dark_population"].as_f64().unwrap(), s["analytic_prediction"].as_f64().unwrap());
        assert!((d - z).abs() < 1e-12);
        assert!(s["truncation_tail"].as_f64().unwrap() < 1e-3);
    }
    assert_eq!(v["config"]["pumping"], "dephasing");
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("x");
    // truncation overflow is a numerical failure
    let r = rsc(&["protocol", "--preset", "appendixA", "--vmax", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(3));
    let mut v: serde_json::Value = serde_json::from_slice(&rsc(&["preset", "fig5"]).stdout).unwrap();
    v["detuning_gamma"] = 1000.0.into();
    let p = d.path().join("bad.json");
    fs::write(&p, v.to_string()).unwrap();
    assert_eq!(rsc(&["simulate", "--config", p.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(rsc(&["simulate", "--out", out.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(rsc(&["protocol", "--preset", "appendixA", "--ideal", "--simulated"]).status.code(), Some(2));
}
