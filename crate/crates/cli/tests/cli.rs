use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vergescope"));
    c.env_remove("VERGESCOPE_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// a = 17.5 deg, b = 1.7 deg/D.
fn write_model(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("model.json");
    let model = serde_json::json!({
        "participant_id": "P01",
        "intercept_deg": 17.5,
        "slope_deg_per_diopter": 1.7,
        "residual_sd_deg": 0.0,
        "n_points": 4,
        "calibrated_range_d": [0.25, 4.0]
    });
    std::fs::write(&path, model.to_string()).unwrap();
    path
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "usage");
}

#[test]
fn missing_input_reports_a_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["fit", "--gva-table", p(&dir.path().join("absent.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert!(err["error"]["kind"].is_string());
    assert!(!err["error"]["message"].as_str().unwrap().is_empty());
}

#[test]
fn malformed_table_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("t.csv");
    std::fs::write(&table, "not,a,header\n1,2,3\n").unwrap();
    let out = run(&["fit", "--gva-table", p(&table)]);
    assert!(!out.status.success());
    assert_eq!(stderr_json(&out)["error"]["kind"], "parse");
}

#[test]
fn logratio_without_subjective_is_rejected() {
    let out = run(&["analyze", "--gva-table", "x.csv", "--logratio"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn estimate_inverts_a_single_value() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path());
    let out = run(&["estimate", "--model", p(&model), "--gva", "24.3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["depth_m"].as_f64().unwrap() - 0.25).abs() < 1e-9);
    assert!((v["diopters"].as_f64().unwrap() - 4.0).abs() < 1e-9);
}

#[test]
fn estimate_reads_samples_from_stdin() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path());
    // Eyes at +-32.4 mm looking at a point 0.25 m ahead with 24.3 deg vergence.
    let half = 24.3f64.to_radians() / 2.0;
    let (s, c) = half.sin_cos();
    let mut input = String::from("t_s,l_conf,r_conf,l_ox,l_oy,l_oz,l_dx,l_dy,l_dz,r_ox,r_oy,r_oz,r_dx,r_dy,r_dz\n");
    for i in 0..5 {
        let conf = if i == 2 { 0.1 } else { 0.95 };
        input.push_str(&format!(
            "{},{conf},{conf},-0.0324,0,0,{s},0,{c},0.0324,0,0,{},0,{c}\n",
            i as f64 * 0.005,
            -s
        ));
    }
    for mode in [&["--stream"][..], &[][..]] {
        let mut child = bin()
            .args(["estimate", "--model", p(&model)])
            .args(mode)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
        let out = child.wait_with_output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let text = String::from_utf8(out.stdout).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t_s,gva_deg,depth_m");
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[3], "0.01,,");
        let depth: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
        assert!((depth - 0.25).abs() < 1e-6, "{mode:?}: {depth}");
    }
}

#[test]
fn estimate_rejects_time_going_backwards() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path());
    let row = |t: f64| format!("{t},1,1,-0.03,0,0,0.2,0,0.98,0.03,0,0,-0.2,0,0.98\n");
    let mut child = bin()
        .args(["estimate", "--model", p(&model), "--stream"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let input = row(0.01) + &row(0.0);
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(!out.status.success());
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "parse");
    assert!(err["error"]["message"].as_str().unwrap().contains("line 2"));
}

#[test]
fn seed_variable_overrides_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let design = dir.path().join("design.json");
    std::fs::write(&design, r#"{"participants": 1}"#).unwrap();
    let simulate = |out: &str, seed: &str, env: Option<&str>| {
        let mut c = bin();
        c.args(["simulate", "--design", p(&design), "--seed", seed, "--out", p(&dir.path().join(out))]);
        if let Some(v) = env {
            c.env("VERGESCOPE_SEED", v);
        }
        let o = c.output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let v: Value = serde_json::from_slice(&o.stdout).unwrap();
        v["seed"].as_u64().unwrap()
    };
    assert_eq!(simulate("a", "4", None), 4);
    assert_eq!(simulate("b", "99", Some("4")), 4);
    let ledger = |d: &str| std::fs::read(dir.path().join(d).join("ledger.json")).unwrap();
    assert_eq!(ledger("a"), ledger("b"));

    let mut c = bin();
    c.args(["simulate", "--design", p(&design), "--out", p(&dir.path().join("c"))])
        .env("VERGESCOPE_SEED", "abc");
    let o = c.output().unwrap();
    assert!(!o.status.success());
    assert_eq!(stderr_json(&o)["error"]["kind"], "config");
}

#[test]
fn mixed_design_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let design = dir.path().join("design.json");
    std::fs::write(&design, r#"{"participants": 1, "noise": {}}"#).unwrap();
    let out = run(&["simulate", "--design", p(&design), "--out", p(&dir.path().join("o"))]);
    assert!(!out.status.success());
    assert_eq!(stderr_json(&out)["error"]["kind"], "config");
}
