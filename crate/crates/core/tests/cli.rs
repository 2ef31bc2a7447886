use std::fs;
use std::path::Path;
use std::process::Command;

use semilinear_spde::cli::{run_from_config, RunConfig, RunOverrides};
use semilinear_spde::experiments::ScalingReport;
use semilinear_spde::report::{emit_report, parse_scaling_csv, Format, Report, SCALING_COLUMNS};
use semilinear_spde::stats::LinearFit;

const CLT: &str = r#"{
    "experiment": "clt",
    "preset": "burgers",
    "grid": {"nx": 15, "nt": 64, "T": 0.1},
    "epsilon_grid": [0.01, 0.001, 0.0001],
    "lambda_exponent_a": 0.2,
    "replicas": 16,
    "delta": 0.01,
    "p": 2,
    "r": 0.5,
    "base_seed": 17
}"#;

fn lab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spde-lab"))
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn run_writes_reports_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "clt.json", CLT);
    let out = dir.path().join("out");
    let status = lab()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    for f in ["clt.csv", "clt.json", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let (rows, fit) = parse_scaling_csv(&fs::read(out.join("clt.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(fit.is_some());
}

#[test]
fn missing_field_fails_with_its_name() {
    let dir = tempfile::tempdir().unwrap();
    let text = CLT.replace("\"epsilon_grid\": [0.01, 0.001, 0.0001],", "");
    let config = write(dir.path(), "bad.json", &text);
    let output = lab().args(["validate", "--config"]).arg(&config).output().unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("epsilon_grid"));
    let output = lab().args(["run", "--config"]).arg(&config).output().unwrap();
    assert!(!output.status.success());
}

#[test]
fn validate_and_presets_commands() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "clt.json", CLT);
    let output = lab().args(["validate", "--config"]).arg(&config).output().unwrap();
    assert!(output.status.success());
    let output = lab().args(["presets", "list"]).output().unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    for name in ["additive", "burgers", "reaction_diffusion"] {
        assert!(text.contains(name));
    }
}

#[test]
fn seed_override_and_repeatability() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "clt.json", CLT);
    let run = |name: &str, seed: Option<u64>, threads: Option<usize>| {
        let out = dir.path().join(name);
        run_from_config(
            &config,
            &RunOverrides {
                out: Some(out.clone()),
                seed,
                threads,
            },
        )
        .unwrap();
        fs::read(out.join("clt.csv")).unwrap()
    };
    let a = run("a", None, Some(1));
    let b = run("b", None, Some(3));
    let c = run("c", Some(18), None);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn every_experiment_runs_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let extra = [
        ("moment_scaling", ""),
        ("mdp", ""),
        (
            "controlled",
            r#", "control": {"kind": "sine_mode", "mode": 1, "amplitude": 1.0, "norm_squared": 1.0}"#,
        ),
        (
            "weak_continuity",
            r#", "control": {"kind": "sine_mode", "mode": 2, "amplitude": 1.0, "norm_squared": null}, "n_max": 4"#,
        ),
        ("kernel_report", r#", "kernel": {"boundary": "dirichlet", "truncation": 32}"#),
        ("rate_eval", r#", "preset": "additive", "target": {"modes": [[1, 0.1], [3, 0.02]]}"#),
    ];
    for (experiment, fields) in extra {
        let mut text = CLT.replace("\"clt\"", &format!("\"{experiment}\""));
        if fields.contains("\"preset\"") {
            text = text.replace("\"preset\": \"burgers\",", "");
        }
        let text = text.trim_end().trim_end_matches('}').to_string() + fields + "}";
        let config = write(dir.path(), &format!("{experiment}.json"), &text);
        let out = dir.path().join(experiment);
        let manifest = run_from_config(
            &config,
            &RunOverrides {
                out: Some(out.clone()),
                ..RunOverrides::default()
            },
        )
        .unwrap_or_else(|e| panic!("{experiment}: {e}"));
        assert_eq!(manifest.files.len(), 2, "{experiment}");
        for f in &manifest.files {
            assert!(f.path.exists());
        }
    }
}

#[test]
fn config_round_trip() {
    let cfg = RunConfig::from_json(CLT).unwrap();
    let again = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
    assert_eq!(cfg, again);
}

fn scaling_report(rows: usize) -> ScalingReport {
    let mut r: ScalingReport = serde_json::from_str(
        r#"{"study":"mdp","preset":"additive","estimate_name":"p","aux_name":"rate",
            "fit_axes":"x","rows":[],"fit":null,"flags":{},"constants":{},"notes":[]}"#,
    )
    .unwrap();
    for j in 0..rows {
        r.rows.push(serde_json::from_value(serde_json::json!({
            "epsilon": 10f64.powi(-(j as i32) - 1),
            "lambda": 1.0 + j as f64 / 3.0,
            "estimate": 0.1 / (j + 1) as f64,
            "std_error": 0.01,
            "n_effective": 100,
            "aux": if j == 1 { None } else { Some(0.7 * j as f64) },
            "aux_std_error": null,
            "n_diverged": 0
        }))
        .unwrap());
    }
    if rows > 1 {
        r.fit = Some(LinearFit {
            slope: 0.123456789,
            intercept: -2.0 / 3.0,
            r_squared: 0.99,
        });
    }
    r
}

#[test]
fn emitted_formats_agree() {
    let dir = tempfile::tempdir().unwrap();
    let report = scaling_report(3);
    let manifest = emit_report(
        &Report::Scaling(report.clone()),
        dir.path(),
        &[Format::Csv, Format::Json, Format::Csv],
    )
    .unwrap();
    assert_eq!(manifest.files.len(), 2);
    let csv_entry = manifest.files.iter().find(|f| f.format == Format::Csv).unwrap();
    assert_eq!(csv_entry.columns, SCALING_COLUMNS);
    let text = fs::read_to_string(&csv_entry.path).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 + 1);
    assert!(text.lines().last().unwrap().starts_with("fit,"));
    let (rows, fit) = parse_scaling_csv(text.as_bytes()).unwrap();
    let json: ScalingReport =
        serde_json::from_slice(&fs::read(dir.path().join("mdp.json")).unwrap()).unwrap();
    assert_eq!(rows, json.rows);
    assert_eq!(fit, json.fit);
    assert_eq!(json, report);
}

#[test]
fn empty_report_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    emit_report(&Report::Scaling(scaling_report(0)), dir.path(), &[Format::Csv]).unwrap();
    let text = fs::read_to_string(dir.path().join("mdp.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
}

#[test]
fn unwritable_directory_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "occupied", "x");
    let result = emit_report(&Report::Scaling(scaling_report(1)), &file.join("sub"), &[Format::Csv]);
    assert!(matches!(result, Err(semilinear_spde::Error::Io(_))));
}
