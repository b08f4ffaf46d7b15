use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qsp_cli::{parse_config, run_verify, CliError, FamilySpec, RunOptions};
use qsp_core::{CubicMatrix, StochKind};
use tempfile::TempDir;

const M1: &str = r#"{"family":"m1","params":{"g":"0.5","u11":"0.25","u21":"0.25"}}"#;

fn qsp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsp"))
        .args(args)
        .env_remove("QSP_DEFAULT_TOL")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn report(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("report is JSON")
}

fn max_of(report: &serde_json::Value, prefix: &str) -> f64 {
    report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["check"].as_str().unwrap().starts_with(prefix))
        .map(|c| c["max_residual"].as_f64().unwrap())
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn minimal_m1_config_is_valid() {
    let cfg = parse_config(M1).unwrap();
    assert!(matches!(cfg.family, FamilySpec::M1(_)));
    assert_eq!(cfg.tolerances.kce_tol, 1e-9);
    assert_eq!(cfg.tolerances.stoch_tol, 1e-12);
    assert_eq!((cfg.grid.t_max, cfg.grid.points), (5.0, 12));
}

#[test]
fn verify_m1_passes_with_tiny_kce_residual() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "m1.json", M1);
    let out = qsp(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report(&out);
    assert_eq!(r["passed"], true);
    assert!(max_of(&r, "kce:") < 1e-12);
    assert!(r["checks"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["count"].as_u64().unwrap() > 0));
}

#[test]
fn unknown_family_is_a_schema_error_naming_the_field() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"family":"m9"}"#);
    let out = qsp(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("family: unknown family \"m9\""),
        "{}",
        stderr(&out)
    );
}

#[test]
fn expression_parse_error_reports_field_and_position() {
    let err = parse_config(r#"{"family":"m1","params":{"g":"0.5*(","u11":"0.25","u21":"0.25"}}"#).unwrap_err();
    match &err {
        CliError::Parse { field, source } => {
            assert_eq!(field, "params.g");
            assert_eq!(source.pos, 5);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("position 5"));
}

#[test]
fn schema_violations_name_their_path() {
    for (text, needle) in [
        (
            r#"{"family":"m1","params":{"g":"0.5","u11":"0.25","u21":"0.25"},"gird":{}}"#,
            "gird",
        ),
        (
            r#"{"family":"m1","params":{"g":"0.5","u11":"0.25","u21":"0.25","zz":"1"}}"#,
            "params.zz",
        ),
        (r#"{"family":"m1","params":{"g":"0.5","u11":"0.25"}}"#, "params.u21"),
        (
            r#"{"family":"m1","params":{"g":"0.5","u11":"0.25","u21":"0.25"},"grid":{"points":"x"}}"#,
            "grid.points",
        ),
        (r#"{"family":"q3","params":{"b":"t"}}"#, "params.b"),
        (
            r#"{"family":"direct_sum","layers":[{"family":"q9"}]}"#,
            "layers[0].family",
        ),
        (
            r#"{"family":"m1","params":{"g":"0.5","u11":"0.25","u21":"0.25"},"grid":{"t_max":-1}}"#,
            "grid.t_max",
        ),
        (
            r#"{"family":"m1","params":{"g":"0.5","u11":"0.25","u21":"0.25"},"kind":"left"}"#,
            "kind",
        ),
        (
            r#"{"family":"twin_a","simulation":{"x0":[0.5,0.6,0.1],"times":[1]}}"#,
            "simulation.x0",
        ),
        (
            r#"{"family":"twin_a","simulation":{"x0":[0.2,0.5,0.3],"times":[2,1]}}"#,
            "simulation.times",
        ),
    ] {
        let err = parse_config(text).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{text}");
        assert!(err.to_string().contains(needle), "{text}: {err}");
    }
}

#[test]
fn twin_b_continuity_collapse_warns_on_grid_and_fails_strict() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "tb.json",
        r#"{"family":"twin_b","params":{"phi":"1/(1+t)","b":"0.01","alpha":"0.2","beta":"0.3"}}"#,
    );
    let path = cfg.to_str().unwrap();
    let grid = qsp(&["verify", "--config", path]);
    assert_eq!(grid.status.code(), Some(0), "{}", stderr(&grid));
    let r = report(&grid);
    let warnings = r["warnings"].as_array().unwrap();
    assert_eq!(warnings.len(), 1);
    assert!(warnings[0].as_str().unwrap().contains("continuity collapse"));
    let nine = r["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["check"] == "nine_equations:twin_b")
        .expect("nine-equation check runs for twin families");
    assert_eq!(nine["passed"], true);
    assert!(nine["components"].get("bir").is_some());

    let strict = qsp(&["verify", "--config", path, "--strict"]);
    assert_ne!(strict.status.code(), Some(0));
    assert!(stderr(&strict).contains("violated at"), "{}", stderr(&strict));
}

#[test]
fn simulate_extinction_reaches_the_absorbing_state() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "ta.json",
        r#"{"family":"twin_a","simulation":{"x0":[0.2,0.5,0.3],"s0":0,"times":[0.5,1,2,4]}}"#,
    );
    let csv = dir.path().join("out.csv");
    let out = qsp(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.ends_with('\n'));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x0,x1,x2"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.ends_with(",1,0,0")), "{rows:?}");
}

#[test]
fn identical_configs_give_identical_bytes() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "m2.json",
        r#"{"family":"m2","params":{"psi":"(1+exp(-t))/2","zeta11":"0.5","zeta21":"0.5",
            "gamma11":"1/(1+exp(-t))","gamma21":"-1/(1+exp(-t))","psi_inf":0.5},
            "simulation":{"x0":[0.3,0.7],"s0":0.5,"times":[1,2,5,20],"mode":"iterated"}}"#,
    );
    let path = cfg.to_str().unwrap();
    let a = qsp(&["verify", "--config", path]);
    let b = qsp(&["verify", "--config", path]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);

    let (x, y) = (dir.path().join("x.csv"), dir.path().join("y.csv"));
    for out in [&x, &y] {
        let o = qsp(&["simulate", "--config", path, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&x).unwrap(), std::fs::read(&y).unwrap());
}

#[test]
fn report_is_written_to_the_configured_path() {
    let dir = TempDir::new().unwrap();
    let rep = dir.path().join("report.json");
    let text = format!(
        r#"{{"family":"q2","params":{{"psi":"exp(-t)"}},"output":{{"report":{}}}}}"#,
        serde_json::to_string(rep.to_str().unwrap()).unwrap()
    );
    let cfg = write(dir.path(), "q2.json", &text);
    let out = qsp(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
    let body = std::fs::read_to_string(&rep).unwrap();
    assert!(body.ends_with('\n'));
    let r: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(r["passed"], true);
    assert!(max_of(&r, "kce:") < 1e-9);
}

#[test]
fn cutoffs_are_added_to_the_grid() {
    let cfg = parse_config(r#"{"family":"q3","params":{"b":1.3}}"#).unwrap();
    let rep = run_verify(&cfg, &RunOptions::default()).unwrap();
    assert!(rep.passed);
    assert!(rep.grid.contains(&1.3));
    assert!(rep.grid.iter().any(|t| *t > 1.0 && *t < 1.3));
}

#[test]
fn failed_check_exits_one() {
    // m1 matrices are (1,2)-stochastic but not 3-stochastic
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "k.json",
        r#"{"family":"m1","params":{"g":"0.5","u11":"0.1","u21":"0.4"},"kind":"3"}"#,
    );
    let out = qsp(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(report(&out)["passed"], false);
    assert!(stderr(&out).contains("check failed: stochasticity"));
}

#[test]
fn invalid_parameters_exit_one_with_a_counterexample() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "bad.json",
        r#"{"family":"m1","params":{"g":"0.5","u11":"0.75","u21":"0.25"}}"#,
    );
    let out = qsp(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("violated at"), "{}", stderr(&out));
}

#[test]
fn tolerance_overrides_apply_in_order() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "m1.json", M1);
    let path = cfg.to_str().unwrap();
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_qsp"));
        cmd.args(["verify", "--config", path])
            .args(extra)
            .env_remove("QSP_DEFAULT_TOL");
        if let Some(v) = env {
            cmd.env("QSP_DEFAULT_TOL", v);
        }
        let o = cmd.output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let r = report(&o);
        let tol = |prefix: &str| {
            r["checks"]
                .as_array()
                .unwrap()
                .iter()
                .find(|c| c["check"].as_str().unwrap().starts_with(prefix))
                .unwrap()["tol"]
                .as_f64()
                .unwrap()
        };
        (tol("kce:"), tol("stochasticity:"))
    };
    assert_eq!(run(None, &[]), (1e-9, 1e-12));
    assert_eq!(run(Some("1e-6"), &[]), (1e-6, 1e-12));
    assert_eq!(run(Some("1e-6"), &["--tol", "1e-3"]), (1e-3, 1e-3));

    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qsp"));
    let bad = cmd
        .args(["verify", "--config", path])
        .env("QSP_DEFAULT_TOL", "tiny")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn eval_writes_json_and_text_matrices() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "m1.json",
        r#"{"family":"m1","params":{"g":"0.3+0.1*sin(t)","u11":"0.1","u21":"0.2"}}"#,
    );
    let path = cfg.to_str().unwrap();
    let json = dir.path().join("p.json");
    let text = dir.path().join("p.txt");
    for out in [&json, &text] {
        let o = qsp(&[
            "eval",
            "--config",
            path,
            "--s",
            "0.5",
            "--t",
            "2",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let j = std::fs::read_to_string(&json).unwrap();
    let t = std::fs::read_to_string(&text).unwrap();
    assert!(j.ends_with('\n') && t.ends_with('\n'));
    let p = CubicMatrix::from_json(j.trim_end()).unwrap();
    assert_eq!(CubicMatrix::from_text(&t).unwrap(), p);
    assert!(p.is_stochastic(StochKind::OneTwo, 1e-12).unwrap().ok);
    // the contraction is the square process [[g(s), g(s)], [1-g(s), 1-g(s)]]
    let g = 0.3 + 0.1 * 0.5f64.sin();
    for (i, k, want) in [(0, 0, g), (0, 1, g), (1, 0, 1.0 - g), (1, 1, 1.0 - g)] {
        let got: f64 = (0..2).map(|j| p.get(i, j, k)).sum();
        assert!((got - want).abs() < 1e-12, "({i},{k}) {got} vs {want}");
    }

    let bad = qsp(&[
        "eval",
        "--config",
        path,
        "--s",
        "2",
        "--t",
        "1",
        "--out",
        text.to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn eval_square_family_as_text() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "q2.json", r#"{"family":"q2","params":{"psi":"exp(-t)"}}"#);
    let out = dir.path().join("u.txt");
    let o = qsp(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--s",
        "0",
        "--t",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let nums: Vec<f64> = text.split_whitespace().skip(1).map(|x| x.parse().unwrap()).collect();
    let r = (-1.0f64).exp();
    let want = [(1.0 + r) / 2.0, (1.0 - r) / 2.0, (1.0 - r) / 2.0, (1.0 + r) / 2.0];
    assert!(text.starts_with("2\n"));
    for (a, b) in nums.iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn simulate_rejects_square_families_and_missing_blocks() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.csv");
    for text in [
        r#"{"family":"q1","params":{"g":"0.5"},"simulation":{"x0":[0.5,0.5],"times":[1]}}"#,
        M1,
    ] {
        let cfg = write(dir.path(), "c.json", text);
        let o = qsp(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(2), "{text}");
    }
}

#[test]
fn direct_sum_config_verifies() {
    let cfg = parse_config(
        r#"{"family":"direct_sum","layers":[
            {"family":"q4","params":{"psi":"exp(-t)"}},
            {"family":"q7","params":{"a":2,"g":"0.4+0.2*sin(t)"}}]}"#,
    )
    .unwrap();
    let rep = run_verify(&cfg, &RunOptions::default()).unwrap();
    assert!(rep.passed, "{}", rep.to_json());
    assert_eq!(rep.product, "maksimov0");
    assert!(rep.grid.contains(&2.0));
}

#[test]
fn list_names_every_family() {
    let out = qsp(&["list"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let names: Vec<&str> = text.lines().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(
        names,
        [
            "q1",
            "q2",
            "q3",
            "q4",
            "q5",
            "q6",
            "q7",
            "direct_sum",
            "m1",
            "m2",
            "m3",
            "theorem_a",
            "n",
            "twin_a",
            "twin_b",
            "twin_c"
        ]
    );
    assert!(text.ends_with('\n'));
}

#[test]
fn missing_config_file_exits_two() {
    let out = qsp(&["verify", "--config", "/nonexistent/qsp.json"]);
    assert_eq!(out.status.code(), Some(2));
}
