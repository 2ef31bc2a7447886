//! Run configuration and experiment orchestration behind the `spde-lab`
//! binary.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::coefficients::{CoefficientSet, Preset};
use crate::error::{Error, Result};
use crate::experiments::{
    run_clt_study, run_controlled_convergence, run_mdp_study, run_moment_scaling,
    run_weak_continuity_probe, ControlSpec, PerturbationShape, StudyConfig,
};
use crate::kernels::{kernel_property_report, Boundary, HeatKernel};
use crate::lattice::{Profile, SpaceTimeGrid};
use crate::rate_fn::min_norm_control;
use crate::report::{emit_report, Format, Manifest, Report};
use crate::solver::solve_deterministic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Clt,
    MomentScaling,
    Mdp,
    Controlled,
    WeakContinuity,
    KernelReport,
    RateEval,
}

/// Sampling of the heat-kernel property report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub boundary: Boundary,
    #[serde(default = "default_truncation")]
    pub truncation: usize,
    #[serde(default = "default_t_samples")]
    pub t_samples: Vec<f64>,
    #[serde(default = "default_x_samples")]
    pub x_samples: Vec<f64>,
}

fn default_truncation() -> usize {
    64
}

fn default_t_samples() -> Vec<f64> {
    vec![1e-3, 1e-2, 1e-1]
}

fn default_x_samples() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            boundary: Boundary::FreeSpace,
            truncation: default_truncation(),
            t_samples: default_t_samples(),
            x_samples: default_x_samples(),
        }
    }
}

/// Terminal target `sum_k c_k sqrt(2) sin(k pi x)` of a rate evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    /// `(k, c_k)` pairs.
    pub modes: Vec<(usize, f64)>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    200
}

impl TargetSpec {
    pub fn build(&self, grid: &SpaceTimeGrid) -> Profile {
        grid.profile_from_fn(|x| {
            self.modes
                .iter()
                .map(|&(k, c)| c * 2f64.sqrt() * (k as f64 * PI * x).sin())
                .sum()
        })
    }
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

fn default_n_max() -> usize {
    8
}

fn default_amplitude() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(flatten)]
    pub study: StudyConfig,
    /// Control for `controlled` and `weak_continuity`.
    #[serde(default)]
    pub control: Option<ControlSpec>,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default)]
    pub perturbation: PerturbationShape,
    #[serde(default = "default_amplitude")]
    pub perturbation_amplitude: f64,
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    /// Target for `rate_eval`.
    #[serde(default)]
    pub target: Option<TargetSpec>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

const REQUIRED_KEYS: [&str; 11] = [
    "experiment",
    "preset",
    "grid",
    "epsilon_grid",
    "lambda_exponent_a",
    "replicas",
    "delta",
    "p",
    "r",
    "base_seed",
    "initial",
];

fn config_error(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Field named in a serde message such as "missing field `x`" or
/// "unknown field `x`", if any.
fn field_in_message(msg: &str) -> Option<&str> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(&msg[start..start + len])
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| config_error("<document>", e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| config_error("<document>", "config must be a JSON object"))?;
        // `initial` has a default; everything else in the list is required.
        if let Some(missing) = REQUIRED_KEYS[..10].iter().find(|k| !obj.contains_key(**k)) {
            return Err(config_error(missing, "missing required field"));
        }
        if let Err(e) = serde_json::from_value::<Experiment>(obj["experiment"].clone()) {
            return Err(config_error("experiment", e.to_string()));
        }
        if let Err(e) = serde_json::from_value::<Preset>(obj["preset"].clone()) {
            return Err(config_error("preset", e.to_string()));
        }
        for key in ["nx", "nt", "T"] {
            if obj["grid"].get(key).is_none() {
                return Err(config_error(&format!("grid.{key}"), "missing required field"));
            }
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| {
            let msg = e.to_string();
            let field = field_in_message(&msg)
                .filter(|f| REQUIRED_KEYS.contains(f))
                .unwrap_or("<document>")
                .to_string();
            Error::Config {
                field,
                message: msg,
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.study.validate()?;
        let grid = self.study.grid.build()?;
        match self.experiment {
            Experiment::Controlled | Experiment::WeakContinuity => {
                let spec = self
                    .control
                    .as_ref()
                    .ok_or_else(|| config_error("control", "required for this experiment"))?;
                spec.build(&grid)
                    .map_err(|e| config_error("control", e.to_string()))?;
                if self.experiment == Experiment::WeakContinuity && self.n_max == 0 {
                    return Err(config_error("n_max", "must be positive"));
                }
            }
            Experiment::RateEval => {
                let t = self
                    .target
                    .as_ref()
                    .ok_or_else(|| config_error("target", "required for rate_eval"))?;
                if t.modes.iter().any(|&(k, _)| k == 0) {
                    return Err(config_error("target", "mode indices start at 1"));
                }
                if !(t.tol > 0.0) || t.max_iter == 0 {
                    return Err(config_error("target", "tol and max_iter must be positive"));
                }
            }
            _ => {}
        }
        if self.formats.is_empty() {
            return Err(config_error("formats", "at least one output format is required"));
        }
        Ok(())
    }

    fn control(&self, grid: &SpaceTimeGrid) -> Result<crate::noise::Control> {
        self.control
            .as_ref()
            .ok_or_else(|| config_error("control", "required for this experiment"))?
            .build(grid)
    }

    /// Runs the selected experiment and returns its report.
    pub fn execute(&self) -> Result<Report> {
        let study = &self.study;
        Ok(match self.experiment {
            Experiment::Clt => Report::Scaling(run_clt_study(study)?),
            Experiment::MomentScaling => Report::Scaling(run_moment_scaling(study)?),
            Experiment::Mdp => Report::Scaling(run_mdp_study(study)?),
            Experiment::Controlled => {
                let h = self.control(&study.grid.build()?)?;
                Report::Scaling(run_controlled_convergence(study, &h)?)
            }
            Experiment::WeakContinuity => {
                let h = self.control(&study.grid.build()?)?;
                Report::Scaling(run_weak_continuity_probe(
                    study,
                    &h,
                    self.n_max,
                    self.perturbation,
                    self.perturbation_amplitude,
                )?)
            }
            Experiment::KernelReport => {
                let spec = self.kernel.clone().unwrap_or_default();
                let kernel = match spec.boundary {
                    Boundary::FreeSpace => HeatKernel::free_space(),
                    Boundary::Dirichlet => HeatKernel::dirichlet(spec.truncation)?,
                };
                Report::Kernel(kernel_property_report(&kernel, &spec.t_samples, &spec.x_samples)?)
            }
            Experiment::RateEval => {
                let spec = self
                    .target
                    .as_ref()
                    .ok_or_else(|| config_error("target", "required for rate_eval"))?;
                let grid = study.grid.build()?;
                let coeffs = CoefficientSet::preset(study.preset);
                let scheme = study.scheme();
                let f = study.initial.build(&grid);
                let u0 = solve_deterministic(&f, &coeffs, &grid, &scheme)?;
                let target = spec.build(&grid);
                Report::Rate(min_norm_control(
                    &target,
                    &u0,
                    &coeffs,
                    &scheme,
                    spec.tol,
                    spec.max_iter,
                )?)
            }
        })
    }
}

/// Overrides applied on top of a config file by the command line.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

/// Loads the config, runs the experiment on a pool of the requested size and
/// writes the report. Output goes to `--out`, else the config's `out`, else
/// `./spde-lab-out`.
pub fn run_from_config(path: &Path, overrides: &RunOverrides) -> Result<Manifest> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = overrides.seed {
        cfg.study.base_seed = seed;
    }
    let out = overrides
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("spde-lab-out"));
    let report = match overrides.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| config_error("threads", e.to_string()))?;
            pool.install(|| cfg.execute())?
        }
        None => cfg.execute()?,
    };
    emit_report(&report, &out, &cfg.formats)
}

#[cfg(test)]
mod tests {
    use super::*;

    const VALID: &str = r#"{
        "experiment": "clt",
        "preset": "additive",
        "grid": {"nx": 15, "nt": 32, "T": 0.1},
        "epsilon_grid": [0.01, 0.001],
        "lambda_exponent_a": 0.2,
        "replicas": 4,
        "delta": 0.1,
        "p": 2,
        "r": 0.5,
        "base_seed": 3
    }"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = RunConfig::from_json(VALID).unwrap();
        assert_eq!(cfg.experiment, Experiment::Clt);
        let again = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn missing_field_is_named() {
        let text = VALID.replace("\"epsilon_grid\": [0.01, 0.001],", "");
        match RunConfig::from_json(&text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "epsilon_grid"),
            other => panic!("{other:?}"),
        }
        let text = VALID.replace("\"preset\": \"additive\"", "\"preset\": \"nope\"");
        assert!(matches!(RunConfig::from_json(&text), Err(Error::Config { field, .. }) if field == "preset"));
    }

    #[test]
    fn controlled_needs_control() {
        let text = VALID.replace("\"clt\"", "\"controlled\"");
        match RunConfig::from_json(&text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "control"),
            other => panic!("{other:?}"),
        }
    }
}
