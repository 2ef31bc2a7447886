//! Drift `b`, flux `g` and noise intensity `sigma` of
//! `u_t = u_xx + b(t,x,u) + d/dx g(t,x,u) + sigma(t,x,u) dW`,
//! with the `r`-derivatives needed by the linearized equations.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Pure coefficient `(t, x, r) -> value`.
pub type CoefficientFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

fn constant(c: f64) -> CoefficientFn {
    Arc::new(move |_, _, _| c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Additive,
    Burgers,
    ReactionDiffusion,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Additive, Preset::Burgers, Preset::ReactionDiffusion];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Additive => "additive",
            Preset::Burgers => "burgers",
            Preset::ReactionDiffusion => "reaction_diffusion",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| invalid(format!("unknown coefficient preset `{name}`")))
    }

    pub fn describe(self) -> &'static str {
        match self {
            Preset::Additive => "b = 0, g = 0, sigma = 1",
            Preset::Burgers => "b = 0, g = r^2/2, sigma = 1/(1+r^2)",
            Preset::ReactionDiffusion => "b = r/(1+r^2), g = 0, sigma = cos(r)",
        }
    }
}

#[derive(Clone)]
pub struct CoefficientSet {
    pub label: String,
    pub b: CoefficientFn,
    pub db_dr: CoefficientFn,
    pub g: CoefficientFn,
    pub dg_dr: CoefficientFn,
    pub d2g_dr2: CoefficientFn,
    pub sigma: CoefficientFn,
    pub growth_k: f64,
    pub lipschitz_l: f64,
    additive: bool,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("label", &self.label)
            .field("growth_k", &self.growth_k)
            .field("lipschitz_l", &self.lipschitz_l)
            .field("additive", &self.additive)
            .finish()
    }
}

impl CoefficientSet {
    /// Starts from the additive model (`b = g = 0`, `sigma = 1`) under a new
    /// label; override pieces with the `with_*` methods.
    pub fn builder(label: impl Into<String>, growth_k: f64, lipschitz_l: f64) -> Self {
        Self {
            label: label.into(),
            b: constant(0.0),
            db_dr: constant(0.0),
            g: constant(0.0),
            dg_dr: constant(0.0),
            d2g_dr2: constant(0.0),
            sigma: constant(1.0),
            growth_k,
            lipschitz_l,
            additive: false,
        }
    }

    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Additive => {
                let mut s = Self::builder("additive", 1.0, 0.0);
                s.additive = true;
                s
            }
            Preset::Burgers => Self::builder("burgers", 1.0, 1.0)
                .with_g(
                    Arc::new(|_, _, r| 0.5 * r * r),
                    Arc::new(|_, _, r| r),
                    constant(1.0),
                )
                .with_sigma(Arc::new(|_, _, r| 1.0 / (1.0 + r * r))),
            Preset::ReactionDiffusion => Self::builder("reaction_diffusion", 1.0, 1.5)
                .with_b(
                    Arc::new(|_, _, r| r / (1.0 + r * r)),
                    Arc::new(|_, _, r| {
                        let q = 1.0 + r * r;
                        (1.0 - r * r) / (q * q)
                    }),
                )
                .with_sigma(Arc::new(|_, _, r: f64| r.cos())),
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(Self::preset(Preset::from_name(name)?))
    }

    pub fn with_b(mut self, b: CoefficientFn, db_dr: CoefficientFn) -> Self {
        self.b = b;
        self.db_dr = db_dr;
        self.additive = false;
        self
    }

    pub fn with_g(mut self, g: CoefficientFn, dg_dr: CoefficientFn, d2g_dr2: CoefficientFn) -> Self {
        self.g = g;
        self.dg_dr = dg_dr;
        self.d2g_dr2 = d2g_dr2;
        self.additive = false;
        self
    }

    pub fn with_sigma(mut self, sigma: CoefficientFn) -> Self {
        self.sigma = sigma;
        self.additive = false;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// True only for the untouched additive preset, where `b = g = 0` and
    /// `sigma = 1` identically.
    pub fn is_additive(&self) -> bool {
        self.additive
    }
}

/// A failed inequality and where it failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: f64,
    pub x: f64,
    pub r: f64,
    /// Second state for two-point (Lipschitz) checks.
    pub r2: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    /// Largest `lhs - rhs` observed (or `lhs / rhs` style defect for
    /// derivative checks); nonpositive when the check passes.
    pub worst_excess: f64,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub label: String,
    pub r_range: (f64, f64),
    pub checks: Vec<CheckResult>,
    pub h1_pass: bool,
    pub h2_pass: bool,
    pub h3_pass: bool,
    pub derivatives_pass: bool,
    /// Smallest `K` for which the sampled (H1)/(H3) growth bounds hold.
    pub measured_growth_k: f64,
    /// Smallest `L` for which the sampled (H2)/(H3) Lipschitz bounds hold.
    pub measured_lipschitz_l: f64,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.h1_pass && self.h2_pass && self.h3_pass && self.derivatives_pass
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-3;
// Slack for rounding in the sampled inequalities.
const INEQ_SLACK: f64 = 1e-12;

struct Tracker {
    name: &'static str,
    worst: f64,
    witness: Option<Witness>,
    pass: bool,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            worst: f64::NEG_INFINITY,
            witness: None,
            pass: true,
        }
    }

    /// Records `lhs <= rhs` at a sample point.
    fn record(&mut self, t: f64, x: f64, r: f64, r2: Option<f64>, lhs: f64, rhs: f64) {
        let excess = if lhs.is_nan() { f64::INFINITY } else { lhs - rhs };
        if excess > self.worst {
            self.worst = excess;
            self.witness = Some(Witness {
                t,
                x,
                r,
                r2,
                lhs,
                rhs,
            });
        }
        if !(lhs <= rhs + INEQ_SLACK * (1.0 + rhs.abs())) {
            self.pass = false;
        }
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name.to_string(),
            pass: self.pass,
            worst_excess: self.worst,
            witness: if self.pass { None } else { self.witness },
        }
    }
}

/// Checks (H1)-(H3) and derivative consistency on a deterministic sample
/// lattice: `samples` points in `r_range` (endpoints included), and three
/// points each in `t in [0, 1]`, `x in [0, 1]`.
pub fn validate_assumptions(
    set: &CoefficientSet,
    r_range: (f64, f64),
    samples: usize,
) -> Result<ValidationReport> {
    if samples < 2 {
        return Err(invalid("validation needs at least two r samples"));
    }
    let (lo, hi) = r_range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(invalid(format!("bad r range [{lo}, {hi}]")));
    }
    let rs: Vec<f64> = (0..samples)
        .map(|j| lo + (hi - lo) * j as f64 / (samples - 1) as f64)
        .collect();
    let tx = [0.0, 0.5, 1.0];
    let k = set.growth_k;
    let l = set.lipschitz_l;

    let mut b_growth = Tracker::new("h1_b_linear_growth");
    let mut g_growth = Tracker::new("h1_g_quadratic_growth");
    let mut s_bound = Tracker::new("h1_sigma_bounded");
    let mut b_lip = Tracker::new("h2_b_local_lipschitz");
    let mut g_lip = Tracker::new("h2_g_local_lipschitz");
    let mut s_lip = Tracker::new("h2_sigma_lipschitz");
    let mut db_growth = Tracker::new("h3_db_linear_growth");
    let mut dg_growth = Tracker::new("h3_dg_linear_growth");
    let mut d2g_bound = Tracker::new("h3_d2g_bounded");
    let mut db_lip = Tracker::new("h3_db_lipschitz");
    let mut dg_lip = Tracker::new("h3_dg_lipschitz");
    let mut db_fd = Tracker::new("derivative_db_dr");
    let mut dg_fd = Tracker::new("derivative_dg_dr");
    let mut d2g_fd = Tracker::new("derivative_d2g_dr2");

    let mut k_meas = 0.0_f64;
    let mut l_meas = 0.0_f64;

    for &t in &tx {
        for &x in &tx {
            let b = |r| (set.b)(t, x, r);
            let g = |r| (set.g)(t, x, r);
            let s = |r| (set.sigma)(t, x, r);
            let db = |r| (set.db_dr)(t, x, r);
            let dg = |r| (set.dg_dr)(t, x, r);
            let d2g = |r| (set.d2g_dr2)(t, x, r);
            for &r in &rs {
                let lin = 1.0 + r.abs();
                let quad = 1.0 + r * r;
                b_growth.record(t, x, r, None, b(r).abs(), k * lin);
                g_growth.record(t, x, r, None, g(r).abs(), k * quad);
                s_bound.record(t, x, r, None, s(r).abs(), k);
                db_growth.record(t, x, r, None, db(r).abs(), k * lin);
                dg_growth.record(t, x, r, None, dg(r).abs(), k * lin);
                d2g_bound.record(t, x, r, None, d2g(r).abs(), k);
                for v in [
                    b(r).abs() / lin,
                    g(r).abs() / quad,
                    s(r).abs(),
                    db(r).abs() / lin,
                    dg(r).abs() / lin,
                    d2g(r).abs(),
                ] {
                    k_meas = k_meas.max(v);
                }

                let fd_check = |tr: &mut Tracker, f: &dyn Fn(f64) -> f64, claimed: f64| {
                    let fd = (f(r + FD_STEP) - f(r - FD_STEP)) / (2.0 * FD_STEP);
                    tr.record(t, x, r, None, (fd - claimed).abs(), FD_REL_TOL * (1.0 + claimed.abs()));
                };
                fd_check(&mut db_fd, &b, db(r));
                fd_check(&mut dg_fd, &g, dg(r));
                fd_check(&mut d2g_fd, &dg, d2g(r));
            }
            for (a, &r1) in rs.iter().enumerate() {
                for &r2 in &rs[a + 1..] {
                    let dr = (r1 - r2).abs();
                    if dr == 0.0 {
                        continue;
                    }
                    let w = 1.0 + r1.abs() + r2.abs();
                    let q_b = (b(r1) - b(r2)).abs();
                    let q_g = (g(r1) - g(r2)).abs();
                    let q_s = (s(r1) - s(r2)).abs();
                    let q_db = (db(r1) - db(r2)).abs();
                    let q_dg = (dg(r1) - dg(r2)).abs();
                    b_lip.record(t, x, r1, Some(r2), q_b, l * w * dr);
                    g_lip.record(t, x, r1, Some(r2), q_g, l * w * dr);
                    s_lip.record(t, x, r1, Some(r2), q_s, l * dr);
                    db_lip.record(t, x, r1, Some(r2), q_db, l * dr);
                    dg_lip.record(t, x, r1, Some(r2), q_dg, l * dr);
                    for v in [q_b / (w * dr), q_g / (w * dr), q_s / dr, q_db / dr, q_dg / dr] {
                        l_meas = l_meas.max(v);
                    }
                }
            }
        }
    }

    let checks: Vec<CheckResult> = [
        b_growth, g_growth, s_bound, b_lip, g_lip, s_lip, db_growth, dg_growth, d2g_bound, db_lip,
        dg_lip, db_fd, dg_fd, d2g_fd,
    ]
    .into_iter()
    .map(Tracker::finish)
    .collect();
    let group = |prefix: &str| {
        checks
            .iter()
            .filter(|c| c.name.starts_with(prefix))
            .all(|c| c.pass)
    };
    Ok(ValidationReport {
        label: set.label.clone(),
        r_range,
        h1_pass: group("h1_"),
        h2_pass: group("h2_"),
        h3_pass: group("h3_"),
        derivatives_pass: group("derivative_"),
        checks,
        measured_growth_k: k_meas,
        measured_lipschitz_l: l_meas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn additive_constants() {
        let s = CoefficientSet::preset(Preset::Additive);
        assert!(s.is_additive());
        for &(t, x, r) in &[(0.0, 0.0, 0.0), (0.3, 0.7, -12.0), (1.0, 1.0, 1e6)] {
            assert_eq!((s.sigma)(t, x, r), 1.0);
            assert_eq!((s.dg_dr)(t, x, r), 0.0);
            assert_eq!((s.b)(t, x, r), 0.0);
        }
    }

    #[test]
    fn burgers_polynomials() {
        let s = CoefficientSet::from_name("burgers").unwrap();
        assert!(!s.is_additive());
        assert_eq!((s.g)(0.1, 0.2, 2.0), 2.0);
        assert_eq!((s.dg_dr)(0.1, 0.2, 2.0), 2.0);
        assert_eq!((s.d2g_dr2)(0.9, 0.4, -7.0), 1.0);
    }

    #[test]
    fn unknown_preset() {
        assert!(CoefficientSet::from_name("foo").is_err());
        assert!(Preset::from_name("reaction_diffusion").is_ok());
    }

    #[test]
    fn additive_passes_everything() {
        let r = validate_assumptions(&CoefficientSet::preset(Preset::Additive), (-20.0, 20.0), 41)
            .unwrap();
        assert!(r.all_pass(), "{r:#?}");
    }

    #[test]
    fn unbounded_sigma_fails_h1() {
        let s = CoefficientSet::builder("linear sigma", 1.0, 1.0)
            .with_sigma(Arc::new(|_, _, r| r));
        let r = validate_assumptions(&s, (-10.0, 10.0), 21).unwrap();
        assert!(!r.h1_pass);
        let c = r.check("h1_sigma_bounded").unwrap();
        assert!(!c.pass);
        let w = c.witness.as_ref().unwrap();
        assert_eq!(w.r.abs(), 10.0);
        // sigma is still Lipschitz with L = 1.
        assert!(r.check("h2_sigma_lipschitz").unwrap().pass);
    }

    #[test]
    fn inconsistent_flux_derivative_is_caught() {
        let s = CoefficientSet::builder("bad g", 1.0, 2.0).with_g(
            Arc::new(|_, _, r| r * r),
            Arc::new(|_, _, r| r),
            constant(1.0),
        );
        let r = validate_assumptions(&s, (-4.0, 4.0), 9).unwrap();
        assert!(!r.derivatives_pass);
        let c = r.check("derivative_dg_dr").unwrap();
        let w = c.witness.as_ref().unwrap();
        // Centered differences of r^2 give 2r, so the defect is |r|.
        assert!((w.lhs - w.r.abs()).abs() < 1e-6, "{w:?}");
        assert_eq!(w.r.abs(), 4.0);
    }

    #[test]
    fn rejects_bad_sampling() {
        let s = CoefficientSet::preset(Preset::Burgers);
        assert!(validate_assumptions(&s, (-1.0, 1.0), 1).is_err());
        assert!(validate_assumptions(&s, (1.0, -1.0), 5).is_err());
    }
}
