//! Monte Carlo studies of the small-noise limit: CLT fluctuations, moment
//! scaling, moderate-deviation probabilities and controlled convergence, plus
//! the deterministic weak-continuity probe of the skeleton map.
//!
//! Replicas run in parallel on rayon. Each replica draws its noise from
//! `StreamKey { seed: base_seed, replica }` and reuses it for every epsilon,
//! and results are reduced in replica order, so a report depends only on its
//! config and never on the worker count.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSet, Preset};
use crate::error::{invalid, Error, Result};
use crate::lattice::{Profile, SpaceTimeGrid};
use crate::noise::{sample_sheet, Control, NoiseLattice, StreamKey};
use crate::rate_fn::mode_variance;
use crate::solver::{
    solve_controlled, solve_deterministic, solve_spde, FluxForm, LinearizedOperator, PathResult,
    SchemeConfig,
};
use crate::stats::{least_squares, mean_and_se, proportion_and_se, LinearFit};

/// Largest fraction of divergent replicas a study tolerates.
pub const MAX_DIVERGENT_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub nt: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
}

impl GridSpec {
    pub fn build(&self) -> Result<SpaceTimeGrid> {
        SpaceTimeGrid::new(self.nx, self.nt, self.horizon)
    }
}

/// Initial condition `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialProfile {
    Zero,
    /// `amplitude * sin(mode pi x)`
    Sine { mode: usize, amplitude: f64 },
}

impl Default for InitialProfile {
    fn default() -> Self {
        InitialProfile::Sine {
            mode: 1,
            amplitude: 1.0,
        }
    }
}

impl InitialProfile {
    pub fn build(&self, grid: &SpaceTimeGrid) -> Profile {
        match *self {
            InitialProfile::Zero => grid.zero_profile(),
            InitialProfile::Sine { mode, amplitude } => {
                grid.profile_from_fn(|x| amplitude * (mode as f64 * PI * x).sin())
            }
        }
    }
}

/// Deterministic control used by the controlled and weak-continuity studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlSpec {
    Zero,
    /// `h(s, y) = amplitude * sqrt(2) sin(mode pi y)`, rescaled so that
    /// `int int h^2 = norm_squared` on the lattice when that is given.
    SineMode {
        mode: usize,
        amplitude: f64,
        norm_squared: Option<f64>,
    },
}

impl ControlSpec {
    pub fn build(&self, grid: &SpaceTimeGrid) -> Result<Control> {
        match *self {
            ControlSpec::Zero => Ok(Control::zeros(*grid)),
            ControlSpec::SineMode {
                mode,
                amplitude,
                norm_squared,
            } => {
                let h = Control::from_fn(*grid, |_, y| {
                    amplitude * 2f64.sqrt() * (mode as f64 * PI * y).sin()
                });
                match norm_squared {
                    None => Ok(h),
                    Some(m) if m > 0.0 => {
                        let current = h.norm_squared();
                        if current == 0.0 {
                            return Err(invalid("cannot normalize a zero control"));
                        }
                        h.scaled((m / current).sqrt()).with_bound(m)
                    }
                    Some(m) => Err(invalid(format!("control norm must be positive, got {m}"))),
                }
            }
        }
    }
}

/// Weakly null perturbation added to the control in the continuity probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationShape {
    /// `sin(2 pi n s / T)`, constant in space.
    Time,
    /// `sin(2 pi n s / T) sqrt(2) sin(n pi y)`.
    #[default]
    SpaceTime,
}

impl PerturbationShape {
    fn eval(self, n: usize, s: f64, y: f64, horizon: f64) -> f64 {
        let temporal = (2.0 * PI * n as f64 * s / horizon).sin();
        match self {
            PerturbationShape::Time => temporal,
            PerturbationShape::SpaceTime => temporal * 2f64.sqrt() * (n as f64 * PI * y).sin(),
        }
    }
}

fn default_a() -> f64 {
    0.2
}

fn default_p() -> f64 {
    2.0
}

fn default_theta() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub preset: Preset,
    pub grid: GridSpec,
    pub epsilon_grid: Vec<f64>,
    /// `lambda(eps) = eps^(-a)`.
    #[serde(default = "default_a")]
    pub lambda_exponent_a: f64,
    pub replicas: usize,
    /// Threshold of the CLT probability `P(sup_t ||Y^eps - Y||_H > delta)`.
    pub delta: f64,
    #[serde(default = "default_p")]
    pub p: f64,
    /// Radius of the terminal-norm event `{||X^eps(T)||_H >= r}`.
    pub r: f64,
    pub base_seed: u64,
    #[serde(default)]
    pub initial: InitialProfile,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default)]
    pub flux_form: FluxForm,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |field: &str, message: String| Error::Config {
            field: field.to_string(),
            message,
        };
        self.grid
            .build()
            .map_err(|e| cfg_err("grid", e.to_string()))?;
        if self.epsilon_grid.is_empty() {
            return Err(cfg_err("epsilon_grid", "must not be empty".into()));
        }
        if self.epsilon_grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(cfg_err("epsilon_grid", "entries must be positive".into()));
        }
        if self.epsilon_grid.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(cfg_err("epsilon_grid", "must be strictly decreasing".into()));
        }
        if !(self.lambda_exponent_a > 0.0 && self.lambda_exponent_a < 0.5) {
            return Err(cfg_err(
                "lambda_exponent_a",
                format!("must lie in (0, 1/2), got {}", self.lambda_exponent_a),
            ));
        }
        // lambda -> infinity and sqrt(eps) lambda -> 0 along the grid.
        let lambdas: Vec<f64> = self.epsilon_grid.iter().map(|&e| self.lambda(e)).collect();
        let kappas: Vec<f64> = self
            .epsilon_grid
            .iter()
            .zip(&lambdas)
            .map(|(e, l)| e.sqrt() * l)
            .collect();
        if lambdas.windows(2).any(|w| !(w[1] > w[0])) || kappas.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(cfg_err(
                "lambda_exponent_a",
                "deviation scale must grow while sqrt(eps) lambda shrinks".into(),
            ));
        }
        if self.replicas == 0 {
            return Err(cfg_err("replicas", "must be positive".into()));
        }
        if !(self.delta > 0.0) {
            return Err(cfg_err("delta", "must be positive".into()));
        }
        if !(self.p >= 2.0) {
            return Err(cfg_err("p", format!("moment order must be >= 2, got {}", self.p)));
        }
        if !(self.r >= 0.0) {
            return Err(cfg_err("r", "must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(cfg_err("theta", "must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn lambda(&self, epsilon: f64) -> f64 {
        epsilon.powf(-self.lambda_exponent_a)
    }

    pub fn scheme(&self) -> SchemeConfig {
        SchemeConfig {
            theta: self.theta,
            flux_form: self.flux_form,
            ..SchemeConfig::default()
        }
    }

    fn key(&self, replica: usize) -> StreamKey {
        StreamKey::new(self.base_seed, replica as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub epsilon: f64,
    pub lambda: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub n_effective: usize,
    /// Study-specific secondary statistic (see [`ScalingReport::aux_name`]).
    pub aux: Option<f64>,
    pub aux_std_error: Option<f64>,
    pub n_diverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub study: String,
    pub preset: String,
    pub estimate_name: String,
    pub aux_name: String,
    /// Axes of the fitted line, e.g. `log(estimate) ~ log(epsilon)`.
    pub fit_axes: String,
    pub rows: Vec<ScalingRow>,
    pub fit: Option<LinearFit>,
    pub flags: BTreeMap<String, bool>,
    pub constants: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl ScalingReport {
    fn new(study: &str, preset: Preset, estimate_name: &str, aux_name: &str, fit_axes: &str) -> Self {
        Self {
            study: study.into(),
            preset: preset.name().into(),
            estimate_name: estimate_name.into(),
            aux_name: aux_name.into(),
            fit_axes: fit_axes.into(),
            rows: Vec::new(),
            fit: None,
            flags: BTreeMap::new(),
            constants: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn flag(&self, name: &str) -> Option<bool> {
        self.flags.get(name).copied()
    }

    /// Log-log fit of `estimate` against `epsilon` over rows with positive
    /// estimates.
    fn fit_log_log(&mut self) {
        let (xs, ys): (Vec<f64>, Vec<f64>) = self
            .rows
            .iter()
            .filter(|r| r.estimate > 0.0 && r.estimate.is_finite())
            .map(|r| (r.epsilon.ln(), r.estimate.ln()))
            .unzip();
        self.fit = least_squares(&xs, &ys);
    }
}

/// `a` nonincreasing into `b`, allowing an increase of `k` combined standard errors.
fn nonincreasing_within(a: (f64, f64), b: (f64, f64), k: f64) -> bool {
    b.0 <= a.0 + k * (a.1 * a.1 + b.1 * b.1).sqrt()
}

/// `b` below `a` by more than `k` combined standard errors.
fn decreasing_beyond(a: (f64, f64), b: (f64, f64), k: f64) -> bool {
    a.0 - b.0 > k * (a.1 * a.1 + b.1 * b.1).sqrt()
}

struct Setup {
    grid: SpaceTimeGrid,
    coeffs: CoefficientSet,
    scheme: SchemeConfig,
    u0: PathResult,
}

fn setup(cfg: &StudyConfig) -> Result<Setup> {
    cfg.validate()?;
    let grid = cfg.grid.build()?;
    let coeffs = CoefficientSet::preset(cfg.preset);
    let scheme = cfg.scheme();
    let f = cfg.initial.build(&grid);
    let u0 = solve_deterministic(&f, &coeffs, &grid, &scheme)?;
    Ok(Setup {
        grid,
        coeffs,
        scheme,
        u0,
    })
}

/// Per-replica outcome for each epsilon: `None` when that solve diverged.
type ReplicaOutcome<T> = Vec<Option<T>>;

/// Runs `per_replica` over all replicas in parallel and regroups the results
/// by epsilon, in replica order.
fn run_replicas<T: Send>(
    cfg: &StudyConfig,
    per_replica: impl Fn(usize, Arc<NoiseLattice>) -> Result<ReplicaOutcome<T>> + Sync,
    grid: &SpaceTimeGrid,
) -> Result<Vec<Vec<Option<T>>>> {
    let outcomes: Vec<ReplicaOutcome<T>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|rep| {
            let noise = Arc::new(sample_sheet(grid, cfg.key(rep)));
            per_replica(rep, noise)
        })
        .collect::<Result<_>>()?;
    let mut by_eps: Vec<Vec<Option<T>>> = (0..cfg.epsilon_grid.len()).map(|_| Vec::new()).collect();
    for outcome in outcomes {
        for (slot, value) in by_eps.iter_mut().zip(outcome) {
            slot.push(value);
        }
    }
    for (j, slot) in by_eps.iter().enumerate() {
        let diverged = slot.iter().filter(|v| v.is_none()).count();
        if diverged as f64 > MAX_DIVERGENT_FRACTION * cfg.replicas as f64 {
            return Err(Error::TooManyDivergent {
                epsilon: cfg.epsilon_grid[j],
                diverged,
                replicas: cfg.replicas,
            });
        }
    }
    Ok(by_eps)
}

/// Keeps divergence as a per-replica miss; other errors abort the study.
fn tolerate_divergence<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Divergence { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// CLT study: `Z^eps = (u^eps - u^0)/sqrt(eps) - Y` on common noise.
///
/// Rows: `estimate = E ||Z^eps(T)||_H`, `aux = P(sup_t ||Z^eps(t)||_H > delta)`.
pub fn run_clt_study(cfg: &StudyConfig) -> Result<ScalingReport> {
    let s = setup(cfg)?;
    let lin = LinearizedOperator::new(&s.u0, &s.coeffs, &s.scheme)?;
    let grid = s.grid;
    let by_eps = run_replicas(
        cfg,
        |_, noise| {
            let y = match tolerate_divergence(lin.solve_noise(&noise))? {
                Some(y) => y,
                None => return Ok(vec![None; cfg.epsilon_grid.len()]),
            };
            cfg.epsilon_grid
                .iter()
                .map(|&eps| {
                    let scheme = s.scheme.with_epsilon(eps);
                    let path = tolerate_divergence(solve_spde(
                        s.u0.field.initial(),
                        &s.coeffs,
                        &grid,
                        &scheme,
                        &noise,
                    ))?;
                    Ok(path.map(|u| {
                        let inv = 1.0 / eps.sqrt();
                        let mut sup = 0.0_f64;
                        let mut last = 0.0;
                        for n in 0..=grid.nt() {
                            let ue = u.field.profile(n).values();
                            let u0 = s.u0.field.profile(n).values();
                            let yv = y.field.profile(n).values();
                            let sq: f64 = (0..grid.nx())
                                .map(|i| ((ue[i] - u0[i]) * inv - yv[i]).powi(2))
                                .sum();
                            last = (grid.dx() * sq).sqrt();
                            sup = sup.max(last);
                        }
                        (sup, last)
                    }))
                })
                .collect()
        },
        &grid,
    )?;

    let mut report = ScalingReport::new(
        "clt",
        cfg.preset,
        "mean_terminal_norm",
        "prob_sup_exceeds_delta",
        "log(estimate) ~ log(epsilon)",
    );
    for (j, slot) in by_eps.iter().enumerate() {
        let eps = cfg.epsilon_grid[j];
        let ok: Vec<(f64, f64)> = slot.iter().flatten().copied().collect();
        let terminal: Vec<f64> = ok.iter().map(|v| v.1).collect();
        let hits = ok.iter().filter(|v| v.0 > cfg.delta).count();
        let (m, se) = mean_and_se(&terminal);
        let (p, pse) = proportion_and_se(hits, ok.len());
        report.rows.push(ScalingRow {
            epsilon: eps,
            lambda: 1.0,
            estimate: m,
            std_error: se,
            n_effective: ok.len(),
            aux: Some(p),
            aux_std_error: Some(pse),
            n_diverged: slot.len() - ok.len(),
        });
    }
    report.fit_log_log();
    let prob_ok = report.rows.windows(2).all(|w| {
        nonincreasing_within(
            (w[0].aux.unwrap_or(0.0), w[0].aux_std_error.unwrap_or(0.0)),
            (w[1].aux.unwrap_or(0.0), w[1].aux_std_error.unwrap_or(0.0)),
            2.0,
        )
    });
    report.flags.insert("probability_nonincreasing".into(), prob_ok);
    if let Some(fit) = report.fit {
        report
            .flags
            .insert("slope_in_window".into(), (0.35..=0.65).contains(&fit.slope));
    }
    report.constants.insert("delta".into(), cfg.delta);
    Ok(report)
}

/// Moment scaling: `estimate = E int |u^eps(T) - u^0(T)|^p dx`, expected to
/// scale like `eps^(p/2)`; `aux = estimate / eps^(p/2)`.
pub fn run_moment_scaling(cfg: &StudyConfig) -> Result<ScalingReport> {
    let s = setup(cfg)?;
    let grid = s.grid;
    let p = cfg.p;
    let by_eps = run_replicas(
        cfg,
        |_, noise| {
            cfg.epsilon_grid
                .iter()
                .map(|&eps| {
                    let scheme = s.scheme.with_epsilon(eps);
                    let path = tolerate_divergence(solve_spde(
                        s.u0.field.initial(),
                        &s.coeffs,
                        &grid,
                        &scheme,
                        &noise,
                    ))?;
                    Ok(path.map(|u| {
                        grid.dx()
                            * u.terminal()
                                .values()
                                .iter()
                                .zip(s.u0.terminal().values())
                                .map(|(a, b)| (a - b).abs().powf(p))
                                .sum::<f64>()
                    }))
                })
                .collect()
        },
        &grid,
    )?;

    let mut report = ScalingReport::new(
        "moment_scaling",
        cfg.preset,
        "mean_terminal_pth_moment",
        "moment_over_eps_half_p",
        "log(estimate) ~ log(epsilon)",
    );
    let mut c1 = 0.0_f64;
    for (j, slot) in by_eps.iter().enumerate() {
        let eps = cfg.epsilon_grid[j];
        let ok: Vec<f64> = slot.iter().flatten().copied().collect();
        let (m, se) = mean_and_se(&ok);
        let scale = eps.powf(0.5 * p);
        c1 = c1.max(m / scale);
        report.rows.push(ScalingRow {
            epsilon: eps,
            lambda: 1.0,
            estimate: m,
            std_error: se,
            n_effective: ok.len(),
            aux: Some(m / scale),
            aux_std_error: Some(se / scale),
            n_diverged: slot.len() - ok.len(),
        });
    }
    report.fit_log_log();
    report.constants.insert("p".into(), p);
    report.constants.insert("c1_hat".into(), c1);
    report.flags.insert("c1_finite".into(), c1.is_finite());
    if let Some(fit) = report.fit {
        let target = 0.5 * p;
        report
            .flags
            .insert("slope_near_half_p".into(), (fit.slope - target).abs() <= 0.3 * target);
    }
    Ok(report)
}

/// Moderate-deviation study: `X^eps(T) = (u^eps(T) - u^0(T)) / (sqrt(eps) lambda)`.
///
/// Rows: `estimate = P(||X^eps(T)||_H >= r)`, `aux = -log(estimate) / lambda^2`
/// (absent when no replica reached the event). For the additive preset the
/// report carries the Gaussian infimum `r^2 / (2 q_1)` and the relative gap
/// at the smallest epsilon with a nonzero estimate.
pub fn run_mdp_study(cfg: &StudyConfig) -> Result<ScalingReport> {
    let s = setup(cfg)?;
    let grid = s.grid;
    let by_eps = run_replicas(
        cfg,
        |_, noise| {
            cfg.epsilon_grid
                .iter()
                .map(|&eps| {
                    let scheme = s.scheme.with_epsilon(eps);
                    let path = tolerate_divergence(solve_spde(
                        s.u0.field.initial(),
                        &s.coeffs,
                        &grid,
                        &scheme,
                        &noise,
                    ))?;
                    let scale = 1.0 / (eps.sqrt() * cfg.lambda(eps));
                    Ok(path.map(|u| {
                        u.terminal().axpy(-1.0, s.u0.terminal()).h_norm(&grid) * scale
                    }))
                })
                .collect()
        },
        &grid,
    )?;

    let mut report = ScalingReport::new(
        "mdp",
        cfg.preset,
        "prob_terminal_norm_at_least_r",
        "neg_log_prob_over_lambda_sq",
        "-log(estimate) ~ lambda^2",
    );
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (j, slot) in by_eps.iter().enumerate() {
        let eps = cfg.epsilon_grid[j];
        let lambda = cfg.lambda(eps);
        let ok: Vec<f64> = slot.iter().flatten().copied().collect();
        let hits = ok.iter().filter(|&&v| v >= cfg.r).count();
        let (p, pse) = proportion_and_se(hits, ok.len());
        let aux = (hits > 0).then(|| -p.ln() / (lambda * lambda));
        // Delta method: d(-ln p / lambda^2) = dp / (p lambda^2).
        let aux_se = (hits > 0).then(|| pse / (p * lambda * lambda));
        if hits == 0 {
            report
                .notes
                .push(format!("epsilon={eps}: no replica reached the event; beyond Monte Carlo reach"));
        } else {
            xs.push(lambda * lambda);
            ys.push(-p.ln());
        }
        report.rows.push(ScalingRow {
            epsilon: eps,
            lambda,
            estimate: p,
            std_error: pse,
            n_effective: ok.len(),
            aux,
            aux_std_error: aux_se,
            n_diverged: slot.len() - ok.len(),
        });
    }
    report.fit = least_squares(&xs, &ys);
    report.constants.insert("r".into(), cfg.r);
    report
        .constants
        .insert("lambda_exponent_a".into(), cfg.lambda_exponent_a);
    let resolved = report
        .rows
        .iter()
        .rev()
        .find(|row| row.aux.is_some() && row.estimate > 0.0);
    if let Some(row) = resolved {
        report
            .constants
            .insert("smallest_resolved_epsilon".into(), row.epsilon);
        report
            .constants
            .insert("smallest_resolved_probability".into(), row.estimate);
    }
    if s.coeffs.is_additive() {
        let oracle = 0.5 * cfg.r * cfg.r / mode_variance(1, grid.horizon());
        report.constants.insert("oracle_rate".into(), oracle);
        if let Some(row) = resolved {
            let measured = row.aux.unwrap_or(f64::NAN);
            let gap = if oracle > 0.0 {
                (measured - oracle).abs() / oracle
            } else {
                measured.abs()
            };
            report.constants.insert("oracle_relative_gap".into(), gap);
            report
                .flags
                .insert("oracle_within_30pct".into(), gap <= 0.3);
        }
    } else {
        report
            .notes
            .push("non-additive preset: estimates only, no oracle comparison".into());
    }
    let monotone = report
        .rows
        .windows(2)
        .all(|w| nonincreasing_within((w[0].estimate, w[0].std_error), (w[1].estimate, w[1].std_error), 2.0));
    report.flags.insert("probability_nonincreasing".into(), monotone);
    Ok(report)
}

/// Controlled convergence: `estimate = E sup_t ||Xbar^{eps,h} - X^h||_H`,
/// `aux = E ||Xbar^{eps,h}(T) - X^h(T)||_H`, with `lambda = eps^(-a)`.
pub fn run_controlled_convergence(cfg: &StudyConfig, h: &Control) -> Result<ScalingReport> {
    let s = setup(cfg)?;
    let grid = s.grid;
    grid.ensure_same(h.grid())?;
    if !h.in_ball() {
        return Err(invalid("control lies outside its declared ball T_M"));
    }
    let skeleton = LinearizedOperator::new(&s.u0, &s.coeffs, &s.scheme)?.solve_control(h)?;
    let by_eps = run_replicas(
        cfg,
        |_, noise| {
            cfg.epsilon_grid
                .iter()
                .map(|&eps| {
                    let scheme = s.scheme.with_epsilon(eps).with_lambda(cfg.lambda(eps));
                    let path = tolerate_divergence(solve_controlled(
                        &s.u0, &s.coeffs, &scheme, &noise, h,
                    ))?;
                    Ok(path.map(|x| {
                        let diff = x.field.combine(1.0, &skeleton.field, -1.0).expect("same grid");
                        let norms = diff.h_norms();
                        (norms.iter().cloned().fold(0.0, f64::max), norms[norms.len() - 1])
                    }))
                })
                .collect()
        },
        &grid,
    )?;

    let mut report = ScalingReport::new(
        "controlled",
        cfg.preset,
        "mean_sup_gap",
        "mean_terminal_gap",
        "log(estimate) ~ log(epsilon)",
    );
    for (j, slot) in by_eps.iter().enumerate() {
        let eps = cfg.epsilon_grid[j];
        let ok: Vec<(f64, f64)> = slot.iter().flatten().copied().collect();
        let sup: Vec<f64> = ok.iter().map(|v| v.0).collect();
        let term: Vec<f64> = ok.iter().map(|v| v.1).collect();
        let (m, se) = mean_and_se(&sup);
        let (mt, set) = mean_and_se(&term);
        report.rows.push(ScalingRow {
            epsilon: eps,
            lambda: cfg.lambda(eps),
            estimate: m,
            std_error: se,
            n_effective: ok.len(),
            aux: Some(mt),
            aux_std_error: Some(set),
            n_diverged: slot.len() - ok.len(),
        });
    }
    report.fit_log_log();
    let decreasing = report.rows.windows(2).all(|w| {
        decreasing_beyond((w[0].estimate, w[0].std_error), (w[1].estimate, w[1].std_error), 2.0)
    });
    report.flags.insert("strictly_decreasing".into(), decreasing);
    report
        .constants
        .insert("control_norm_squared".into(), h.norm_squared());
    report
        .constants
        .insert("skeleton_sup_norm".into(), skeleton.sup_h_norm());
    Ok(report)
}

/// Weak-continuity probe: `sup_t ||X^{h_n} - X^h||_H` for
/// `h_n = h + amplitude * perturbation_n`, `n = 1..=n_max`.
///
/// Rows are indexed by `n`: the `epsilon` column holds `1/n` and the `lambda`
/// column holds `n`. The study is deterministic, so standard errors are zero.
pub fn run_weak_continuity_probe(
    cfg: &StudyConfig,
    h: &Control,
    n_max: usize,
    shape: PerturbationShape,
    amplitude: f64,
) -> Result<ScalingReport> {
    let s = setup(cfg)?;
    let grid = s.grid;
    grid.ensure_same(h.grid())?;
    if n_max == 0 {
        return Err(invalid("n_max must be positive"));
    }
    let op = LinearizedOperator::new(&s.u0, &s.coeffs, &s.scheme)?;
    let base = op.solve_control(h)?;
    let horizon = grid.horizon();
    let diffs: Vec<f64> = (1..=n_max)
        .into_par_iter()
        .map(|n| {
            let bump = Control::from_fn(grid, |t, y| amplitude * shape.eval(n, t, y, horizon));
            let hn = h.combine(1.0, &bump, 1.0)?;
            let xn = op.solve_control(&hn)?;
            let diff = xn.field.combine(1.0, &base.field, -1.0)?;
            Ok(diff.h_norms().into_iter().fold(0.0, f64::max))
        })
        .collect::<Result<_>>()?;

    let mut report = ScalingReport::new(
        "weak_continuity",
        cfg.preset,
        "sup_gap",
        "gap_over_first",
        "log(estimate) ~ log(1/n)",
    );
    for (idx, d) in diffs.iter().enumerate() {
        let n = idx + 1;
        report.rows.push(ScalingRow {
            epsilon: 1.0 / n as f64,
            lambda: n as f64,
            estimate: *d,
            std_error: 0.0,
            n_effective: 1,
            aux: Some(if diffs[0] > 0.0 { d / diffs[0] } else { 0.0 }),
            aux_std_error: None,
            n_diverged: 0,
        });
    }
    report.fit_log_log();
    report.flags.insert(
        "monotone_decreasing".into(),
        diffs.windows(2).all(|w| w[1] < w[0]),
    );
    let last_ratio = diffs[diffs.len() - 1] / diffs[0];
    report
        .flags
        .insert("below_10pct_of_first".into(), last_ratio < 0.1);
    report.constants.insert("last_over_first".into(), last_ratio);
    report.constants.insert("amplitude".into(), amplitude);
    report.notes.push(format!("perturbation shape: {shape:?}"));
    Ok(report)
}
