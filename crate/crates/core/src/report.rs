//! CSV and JSON persistence of study reports.
//!
//! Floats are written in Rust's shortest round-trip form, so parsing an
//! emitted CSV reproduces the in-memory values bit for bit and identical
//! reports always serialize to identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::experiments::{ScalingReport, ScalingRow};
use crate::kernels::KernelReport;
use crate::rate_fn::RateResult;
use crate::stats::LinearFit;

/// Columns of a scaling-report CSV. `row` is `data` for per-epsilon rows and
/// `fit` for the trailing summary row, which fills only the last three columns.
pub const SCALING_COLUMNS: [&str; 12] = [
    "row",
    "epsilon",
    "lambda",
    "estimate",
    "std_error",
    "n_effective",
    "aux",
    "aux_std_error",
    "n_diverged",
    "slope",
    "intercept",
    "r_squared",
];

/// Columns of the key/value CSV written for kernel and rate reports.
pub const SUMMARY_COLUMNS: [&str; 2] = ["quantity", "value"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone)]
pub enum Report {
    Scaling(ScalingReport),
    Kernel(KernelReport),
    Rate(RateResult),
}

impl Report {
    pub fn stem(&self) -> &str {
        match self {
            Report::Scaling(r) => &r.study,
            Report::Kernel(_) => "kernel_report",
            Report::Rate(_) => "rate_eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub format: Format,
    /// CSV header, empty for JSON files.
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn paths(&self) -> Vec<&Path> {
        self.files.iter().map(|f| f.path.as_path()).collect()
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn scaling_csv(report: &ScalingReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SCALING_COLUMNS)?;
    for row in &report.rows {
        w.write_record([
            "data".to_string(),
            fmt_f64(row.epsilon),
            fmt_f64(row.lambda),
            fmt_f64(row.estimate),
            fmt_f64(row.std_error),
            row.n_effective.to_string(),
            fmt_opt(row.aux),
            fmt_opt(row.aux_std_error),
            row.n_diverged.to_string(),
            String::new(),
            String::new(),
            String::new(),
        ])?;
    }
    if let Some(fit) = report.fit {
        let mut record = vec![String::new(); SCALING_COLUMNS.len()];
        record[0] = "fit".into();
        record[9] = fmt_f64(fit.slope);
        record[10] = fmt_f64(fit.intercept);
        record[11] = fmt_f64(fit.r_squared);
        w.write_record(&record)?;
    }
    w.into_inner().map_err(|e| invalid(e.to_string()))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| invalid(format!("not a number in report CSV: `{s}`")))
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(s).map(Some)
    }
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| invalid(format!("not a count in report CSV: `{s}`")))
}

/// Inverse of [`scaling_csv`]: the data rows and the fit summary.
pub fn parse_scaling_csv(bytes: &[u8]) -> Result<(Vec<ScalingRow>, Option<LinearFit>)> {
    let mut r = csv::Reader::from_reader(bytes);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != SCALING_COLUMNS {
        return Err(invalid(format!("unexpected scaling CSV header {header:?}")));
    }
    let mut rows = Vec::new();
    let mut fit = None;
    for record in r.records() {
        let rec = record?;
        match &rec[0] {
            "data" => rows.push(ScalingRow {
                epsilon: parse_f64(&rec[1])?,
                lambda: parse_f64(&rec[2])?,
                estimate: parse_f64(&rec[3])?,
                std_error: parse_f64(&rec[4])?,
                n_effective: parse_usize(&rec[5])?,
                aux: parse_opt(&rec[6])?,
                aux_std_error: parse_opt(&rec[7])?,
                n_diverged: parse_usize(&rec[8])?,
            }),
            "fit" => {
                fit = Some(LinearFit {
                    slope: parse_f64(&rec[9])?,
                    intercept: parse_f64(&rec[10])?,
                    r_squared: parse_f64(&rec[11])?,
                })
            }
            other => return Err(invalid(format!("unknown CSV row kind `{other}`"))),
        }
    }
    Ok((rows, fit))
}

fn summary_csv(pairs: &[(String, String)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_COLUMNS)?;
    for (k, v) in pairs {
        w.write_record([k, v])?;
    }
    w.into_inner().map_err(|e| invalid(e.to_string()))
}

fn kernel_pairs(k: &KernelReport) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = vec![
        ("boundary".into(), format!("{:?}", k.boundary)),
        ("mass_defect".into(), fmt_f64(k.mass_defect)),
        ("l2_mass_ratio".into(), fmt_f64(k.l2_mass_ratio)),
        ("l2_mass_ratio_convention".into(), fmt_f64(k.l2_mass_ratio_convention)),
        ("semigroup_defect".into(), fmt_f64(k.semigroup_defect)),
        ("symmetry_defect".into(), fmt_f64(k.symmetry_defect)),
        ("derivative_fd_defect".into(), fmt_f64(k.derivative_fd_defect)),
        ("derivative_bound_margin".into(), fmt_f64(k.derivative_bound_margin)),
    ];
    for m in &k.lp_moment_fits {
        let stem = format!("moment_r{}_{:?}", m.exponent_r, m.derivative).to_lowercase();
        out.push((format!("{stem}_time_power"), fmt_f64(m.time_power)));
        out.push((format!("{stem}_constant"), fmt_f64(m.constant)));
        out.push((format!("{stem}_spread"), fmt_f64(m.spread)));
    }
    for (name, flag) in [
        ("mass_ok", k.mass_ok),
        ("semigroup_ok", k.semigroup_ok),
        ("symmetry_ok", k.symmetry_ok),
        ("derivative_fd_ok", k.derivative_fd_ok),
        ("derivative_bound_ok", k.derivative_bound_ok),
        ("moments_ok", k.moments_ok),
        ("l2_matches_claimed_constant", k.l2_matches_claimed_constant),
    ] {
        out.push((name.into(), flag.to_string()));
    }
    out
}

fn rate_pairs(r: &RateResult) -> Vec<(String, String)> {
    let mut out = vec![
        ("rate_value".into(), fmt_f64(r.rate_value)),
        ("forward_residual".into(), fmt_f64(r.forward_residual)),
        ("cg_iterations".into(), r.cg_iterations.to_string()),
        ("preconditioned".into(), r.preconditioned.to_string()),
        ("control_norm_squared".into(), fmt_f64(r.control_star.norm_squared())),
    ];
    for (i, v) in r.residual_history.iter().enumerate() {
        out.push((format!("residual_{i}"), fmt_f64(*v)));
    }
    out
}

/// Writes `report` into `dir` in each requested format (once per format) and
/// returns the manifest of written files.
pub fn emit_report(report: &Report, dir: &Path, formats: &[Format]) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut manifest = Manifest::default();
    let mut seen = Vec::new();
    for &format in formats {
        if seen.contains(&format) {
            continue;
        }
        seen.push(format);
        let (ext, bytes, columns): (&str, Vec<u8>, Vec<String>) = match format {
            Format::Csv => {
                let (bytes, cols): (Vec<u8>, &[&str]) = match report {
                    Report::Scaling(r) => (scaling_csv(r)?, &SCALING_COLUMNS),
                    Report::Kernel(k) => (summary_csv(&kernel_pairs(k))?, &SUMMARY_COLUMNS),
                    Report::Rate(r) => (summary_csv(&rate_pairs(r))?, &SUMMARY_COLUMNS),
                };
                ("csv", bytes, cols.iter().map(|c| c.to_string()).collect())
            }
            Format::Json => {
                let mut bytes = match report {
                    Report::Scaling(r) => serde_json::to_vec_pretty(r)?,
                    Report::Kernel(k) => serde_json::to_vec_pretty(k)?,
                    Report::Rate(r) => serde_json::to_vec_pretty(r)?,
                };
                bytes.push(b'\n');
                ("json", bytes, Vec::new())
            }
        };
        let path = dir.join(format!("{}.{ext}", report.stem()));
        fs::write(&path, bytes)?;
        manifest.files.push(ManifestEntry {
            path,
            format,
            columns,
        });
    }
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    fs::write(dir.join("manifest.json"), bytes)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn report(rows: usize) -> ScalingReport {
        let rows: Vec<ScalingRow> = (0..rows)
            .map(|j| ScalingRow {
                epsilon: 10f64.powi(-(j as i32) - 2),
                lambda: 1.0 / 3.0,
                estimate: 0.1 + j as f64 / 7.0,
                std_error: 1e-17 * (j + 1) as f64,
                n_effective: 200 - j,
                aux: (j % 2 == 0).then_some(f64::MIN_POSITIVE),
                aux_std_error: None,
                n_diverged: j,
            })
            .collect();
        ScalingReport {
            study: "clt".into(),
            preset: "burgers".into(),
            estimate_name: "e".into(),
            aux_name: "a".into(),
            fit_axes: "x".into(),
            fit: (rows.len() > 1).then_some(LinearFit {
                slope: 0.4999999999999999,
                intercept: -1.0 / 3.0,
                r_squared: 0.987654321,
            }),
            rows,
            flags: BTreeMap::new(),
            constants: BTreeMap::new(),
            notes: vec![],
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let r = report(3);
        let bytes = scaling_csv(&r).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 + 1);
        let (rows, fit) = parse_scaling_csv(&bytes).unwrap();
        assert_eq!(rows, r.rows);
        assert_eq!(fit, r.fit);
    }

    #[test]
    fn empty_report_is_header_only() {
        let bytes = scaling_csv(&report(0)).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(text.lines().count(), 1);
    }
}
