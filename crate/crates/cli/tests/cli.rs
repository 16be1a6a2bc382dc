use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn homwb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_homwb")).args(args).output().expect("binary runs")
}

fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    homwb(&args)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cw_config(duration: f64, atom: f64, ion: f64, overlap: f64, seed: u64) -> String {
    format!(
        r#"{{ "mode": "cw", "duration_s": {duration},
            "atom": {{ "rate": {atom}, "g2_zero": 0.119 }},
            "ion": {{ "rate": {ion}, "g2_zero": 0.05 }},
            "overlap": {overlap}, "detectors": {{ "dark_rate": [50, 50] }}, "rng_seed": {seed} }}"#
    )
}

#[test]
fn zero_duration_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.json", &cw_config(0.0, 1e4, 400.0, 1.0, 1));
    let out = dir.path().join("out");
    let o = run("simulate", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["status"], "error");
    assert_eq!(m["error"]["kind"], "input");
    assert!(m["error"]["message"].as_str().unwrap().contains("duration_s"));
    assert!(!out.join("tags.csv").exists());
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let text = cw_config(1.0, 1e3, 100.0, 1.0, 1).replace("\"rng_seed\"", "\"rng_sed\"");
    let cfg = write(dir.path(), "c.json", &text);
    let o = run("simulate", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rng_sed"));
}

#[test]
fn missing_config_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = run("theory", &dir.path().join("absent.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(json(&out.join("manifest.json"))["error"]["kind"], "io");
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.json", &cw_config(1.0, 1e3, 100.0, 1.0, 1));
    let blocker = write(dir.path(), "file", "");
    let o = run("simulate", &cfg, &blocker.join("out"), &[]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn same_seed_gives_identical_bytes_for_any_thread_count() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.json", &cw_config(3.0, 2e4, 1e3, 0.5, 9));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, threads) in [(&a, "1"), (&b, "4")] {
        let o = run("simulate", &cfg, out, &["--threads", threads, "--seed", "42"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["tags.csv", "manifest.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["seed"], 42);
    assert_eq!(m["config"]["rng_seed"], 42);
    let lines = fs::read_to_string(a.join("tags.csv")).unwrap().lines().count() as u64 - 1;
    let counts = &m["counts"];
    assert_eq!(counts["A"].as_u64().unwrap() + counts["B"].as_u64().unwrap() + counts["CLK"].as_u64().unwrap(), lines);

    let c = dir.path().join("c");
    run("simulate", &cfg, &c, &["--seed", "43"]);
    assert_ne!(fs::read(a.join("tags.csv")).unwrap(), fs::read(c.join("tags.csv")).unwrap());
}

#[test]
fn binary_and_csv_streams_analyze_alike() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.json", &cw_config(2.0, 5e4, 5e3, 1.0, 3));
    for fmt in ["csv", "binary"] {
        let o = run("simulate", &cfg, &dir.path().join(fmt), &["--format", fmt]);
        assert!(o.status.success());
    }
    let an = |input: &str, out: &str| {
        let text = format!(r#"{{ "g2": [{{ "label": "x", "input": "{input}", "tau_max_ns": 100, "bin_ns": 5 }}] }}"#);
        let cfg = write(dir.path(), &format!("{out}.json"), &text);
        let o = run("analyze", &cfg, &dir.path().join(out), &[]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(dir.path().join(out).join("g2_x.csv")).unwrap()
    };
    assert_eq!(an("csv/tags.csv", "ac"), an("binary/tags.bin", "ab"));
}

#[test]
fn malformed_row_reports_its_line() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "s.csv", "channel,timestamp_ps\nA,100\nB,200\nQ,300\nA,400\n");
    let cfg = write(
        dir.path(),
        "a.json",
        r#"{ "g2": [{ "label": "s", "input": "s.csv", "tau_max_ns": 10, "bin_ns": 1 }] }"#,
    );
    let out = dir.path().join("out");
    let o = run("analyze", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    let msg = json(&out.join("manifest.json"))["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("line 4"), "{msg}");
    assert!(!out.join("g2_s.csv").exists());
}

#[test]
fn pulsed_analysis_without_clock_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.json", &cw_config(1.0, 1e4, 1e3, 1.0, 5));
    assert!(run("simulate", &cfg, &dir.path().join("sim"), &[]).status.success());
    let mut analysis = json(&configs().join("analyze_pulsed.json"));
    analysis["pulsed"]["input"] = Value::from("sim/tags.csv");
    analysis["format"] = Value::from("csv");
    let acfg = write(dir.path(), "a.json", &analysis.to_string());
    let out = dir.path().join("out");
    let o = run("analyze", &acfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    let m = json(&out.join("manifest.json"));
    assert!(m["error"]["message"].as_str().unwrap().contains("CLK"));
}

#[test]
fn pulsed_pipeline_reports_visibility_at_both_bin_widths() {
    let dir = TempDir::new().unwrap();
    let text = r#"{ "mode": "pulsed", "duration_s": 4,
        "atom": { "rate": 0.3 }, "ion": { "rate": 0.01 }, "overlap": 1.0,
        "detectors": { "dark_rate": [100, 100] }, "rng_seed": 11 }"#;
    let cfg = write(dir.path(), "p.json", text);
    assert!(run("simulate", &cfg, &dir.path().join("sim"), &["--format", "binary"]).status.success());
    let mut analysis = json(&configs().join("analyze_pulsed.json"));
    analysis["pulsed"]["input"] = Value::from("sim/tags.bin");
    analysis["format"] = Value::from("binary");
    let acfg = write(dir.path(), "a.json", &analysis.to_string());
    for bin in ["5", "1"] {
        let out = dir.path().join(format!("out{bin}"));
        let o = run("analyze", &acfg, &out, &["--bin-ns", bin]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let r = json(&out.join("report.json"));
        let p = &r["pulsed"];
        assert_eq!(p["tau_bin_ns"].as_f64(), Some(bin.parse().unwrap()));
        assert_eq!(p["clocks"], 800_000);
        assert!(p["visibility"]["value"].is_number());
        assert!(p["background_center"].as_f64().unwrap() > 0.0);
        for f in ["overlapped.csv", "reference.csv", "background.csv", "report.json", "manifest.json"] {
            assert!(out.join(f).exists(), "{f}");
        }
        let rows = fs::read_to_string(out.join("overlapped.csv")).unwrap();
        let step: f64 = bin.parse().unwrap();
        let taus: Vec<f64> = rows.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
        assert!((taus[1] - taus[0] - step).abs() < 1e-9);
    }
}

#[test]
fn cw_visibility_closes_on_the_counting_model() {
    let dir = TempDir::new().unwrap();
    for (name, c, seed) in [("par", 1.0, 21), ("perp", 0.0, 22)] {
        let cfg = write(dir.path(), &format!("{name}.json"), &cw_config(100.0, 1e5, 4e3, c, seed));
        let o = run("simulate", &cfg, &dir.path().join(name), &["--format", "binary"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let acfg = write(
        dir.path(),
        "a.json",
        r#"{ "format": "binary", "cw": { "parallel": "par/tags.bin", "perpendicular": "perp/tags.bin",
             "tau_max_ns": 200, "bin_ns": 1, "center_bins": 9 } }"#,
    );
    let out = dir.path().join("an");
    assert!(run("analyze", &acfg, &out, &[]).status.success());
    let r = json(&out.join("report.json"));
    let v = r["cw"]["visibility"]["value"].as_f64().unwrap();
    let s = r["cw"]["visibility"]["err"].as_f64().unwrap();

    let ratio: f64 = 1e5 / 4e3;
    let expected = 1.0 / (1.0 + (ratio * 0.119 + 0.05 / ratio) / 2.0);
    assert!((v - expected).abs() < 3.0 * s, "V = {v} ± {s}, expected {expected}");
    assert!(s < 0.1);
}

#[test]
fn theory_for_identical_photons_is_zero() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "t.json",
        r#"{ "atom_envelope": { "kind": "exponential", "decay_ns": 50 },
             "ion_envelope": { "kind": "exponential", "decay_ns": 50 },
             "tau": { "min_ns": -100, "max_ns": 100, "step_ns": 2 } }"#,
    );
    let out = dir.path().join("out");
    assert!(run("theory", &cfg, &out, &[]).status.success());
    let text = fs::read_to_string(out.join("interfering.csv")).unwrap();
    let values: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(values.len(), 101);
    assert!(values.iter().all(|v| v.abs() < 1e-12));
    let reference = fs::read_to_string(out.join("noninterfering.csv")).unwrap();
    let peak = reference.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).fold(0.0, f64::max);
    assert!((peak - 1.0).abs() < 1e-12);
}

#[test]
fn zeeman_lines_narrow_the_dip() {
    let dir = TempDir::new().unwrap();
    let fwhm = |name: &str| {
        let out = dir.path().join(name);
        let o = run("theory", &configs().join(name), &out, &[]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        json(&out.join("report.json"))
    };
    let zeeman = fwhm("theory_zeeman.json");
    let ideal = fwhm("theory_ideal.json");
    let wz = zeeman["dip_fwhm_ns"].as_f64().unwrap();
    let wi = ideal["dip_fwhm_ns"].as_f64().unwrap();
    assert!(wz < 0.5 * wi, "{wz} vs {wi}");
    assert!((zeeman["gate"]["end"].as_f64().unwrap() - 80.47).abs() < 0.125);
    let bands = &zeeman["bands"];
    assert!((bands["visibility"].as_f64().unwrap() - 0.40).abs() < 0.01);
    assert_eq!(zeeman["interfering_at_zero"], 0.0);
}

#[test]
fn gate_missing_the_photons_gives_a_degenerate_curve() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "t.json",
        r#"{ "gate": { "start_ns": 5000, "end_ns": 5100 }, "tau": { "min_ns": -10, "max_ns": 10, "step_ns": 1 } }"#,
    );
    let out = dir.path().join("out");
    assert!(run("theory", &cfg, &out, &[]).status.success());
    assert_eq!(json(&out.join("report.json"))["degenerate"], true);
}

#[test]
fn entangle_reproduces_the_rate_table() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = run("entangle", &configs().join("entangle_bins.json"), &out, &[]);
    assert!(o.status.success());
    let text = fs::read_to_string(out.join("table.csv")).unwrap();
    let rows: Vec<Vec<String>> = text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    let col = |r: usize, c: usize| rows[r][c].parse::<f64>().unwrap();
    for (r, (f, rate)) in [(1.0, 5.1e-4), (0.93, 1.2e-3), (0.72, 1.8e-3)].iter().enumerate() {
        assert!((col(r, 1) - f).abs() < 1e-9);
        assert!((col(r, 3) - rate).abs() / rate < 0.02, "row {r}: {}", col(r, 3));
    }
    assert!((col(0, 3) - 40.0 / 79200.0).abs() < 1e-15);
    assert!((col(0, 4) / col(0, 3) - 3.0 * 4.79 * 1.286 * 1.4 * 1.5).abs() < 1e-9);
}

#[test]
fn empty_improvement_list_projects_the_current_rate() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "e.json",
        r#"{ "run_time_s": 1000, "rows": [{ "label": "a", "coincidences": 7, "visibility": 0.5 }] }"#,
    );
    let out = dir.path().join("out");
    assert!(run("entangle", &cfg, &out, &[]).status.success());
    let r = json(&out.join("report.json"));
    assert_eq!(r["rows"][0]["current_rate"], r["rows"][0]["projected_rate"]);
    assert_eq!(r["total_improvement"], 1.0);
}

#[test]
fn empty_table_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "e.json", r#"{ "run_time_s": 1000, "rows": [] }"#);
    let out = dir.path().join("out");
    assert_eq!(run("entangle", &cfg, &out, &[]).status.code(), Some(2));
    assert!(!out.join("table.csv").exists());
}
