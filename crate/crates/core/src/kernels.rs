//! Heat kernels for `d/dt - d^2/dx^2`, free-space and Dirichlet on `[0, 1]`,
//! the space-time convolution operator `J`, and numerical checks of the
//! standard kernel properties.
//!
//! Free space: `G_t(x, y) = (4 pi t)^(-1/2) exp(-(x - y)^2 / (4 t))`.
//! Dirichlet: `G_t(x, y) = 2 sum_k sin(k pi x) sin(k pi y) exp(-k^2 pi^2 t)`,
//! truncated after `truncation` modes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::lattice::{Field, Profile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    FreeSpace,
    Dirichlet,
}

/// Evaluate the kernel itself or its derivative in the second argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Derivative {
    Value,
    DDy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatKernel {
    boundary: Boundary,
    truncation: usize,
}

impl HeatKernel {
    pub fn free_space() -> Self {
        Self {
            boundary: Boundary::FreeSpace,
            truncation: 0,
        }
    }

    pub fn dirichlet(truncation: usize) -> Result<Self> {
        if truncation == 0 {
            return Err(invalid("Dirichlet kernel needs at least one mode"));
        }
        Ok(Self {
            boundary: Boundary::Dirichlet,
            truncation,
        })
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn eval(&self, t: f64, x: f64, y: f64, derivative: Derivative) -> Result<f64> {
        if !(t > 0.0) {
            return Err(invalid(format!("kernel time must be positive, got {t}")));
        }
        Ok(self.eval_unchecked(t, x, y, derivative))
    }

    fn eval_unchecked(&self, t: f64, x: f64, y: f64, derivative: Derivative) -> f64 {
        match self.boundary {
            Boundary::FreeSpace => {
                let d = x - y;
                let g = (4.0 * PI * t).powf(-0.5) * (-d * d / (4.0 * t)).exp();
                match derivative {
                    Derivative::Value => g,
                    Derivative::DDy => g * d / (2.0 * t),
                }
            }
            Boundary::Dirichlet => {
                let mut acc = 0.0;
                for k in 1..=self.truncation {
                    let kp = k as f64 * PI;
                    let decay = (-kp * kp * t).exp();
                    if decay == 0.0 {
                        break;
                    }
                    let sx = (kp * x).sin();
                    let term = match derivative {
                        Derivative::Value => sx * (kp * y).sin(),
                        Derivative::DDy => sx * (kp * (kp * y).cos()),
                    };
                    acc += term * decay;
                }
                2.0 * acc
            }
        }
    }
}

/// Discrete `J(v)(t, x) = int_0^t int_0^1 H(t - s; x, y) v(s, y) dy ds` with
/// `H = G` or `H = dG/dy`.
///
/// `v` is taken piecewise constant in time (the average of the two bounding
/// levels on each step) and integrated in space with the midpoint weights of
/// the lattice. For the Dirichlet kernel each mode is integrated exactly in
/// time, so the kernel is never evaluated at zero lag. The free-space kernel
/// uses one-point quadrature at lag `t_n - t_m - dt/2`.
pub fn convolve_j(kernel: &HeatKernel, mode: Derivative, v: &Field) -> Result<Field> {
    let grid = *v.grid();
    if grid.nx() == 0 || v.profiles().is_empty() {
        return Err(invalid("convolve_j on an empty field"));
    }
    let nx = grid.nx();
    let nt = grid.nt();
    let dx = grid.dx();
    let dt = grid.dt();
    let averaged: Vec<Vec<f64>> = (0..nt)
        .map(|m| {
            v.profile(m)
                .values()
                .iter()
                .zip(v.profile(m + 1).values())
                .map(|(a, b)| 0.5 * (a + b))
                .collect()
        })
        .collect();

    let mut out = vec![Profile::zeros(nx); nt + 1];
    match kernel.boundary {
        Boundary::Dirichlet => {
            let modes = kernel.truncation;
            // Basis tables: out_basis[k][i] = 2 sin(k pi x_i),
            // in_basis[k][j] = dx * (sin or k pi cos)(k pi y_j).
            let mut out_basis = vec![vec![0.0; nx]; modes];
            let mut in_basis = vec![vec![0.0; nx]; modes];
            for k in 0..modes {
                let kp = (k + 1) as f64 * PI;
                for i in 0..nx {
                    let x = grid.x(i);
                    out_basis[k][i] = 2.0 * (kp * x).sin();
                    in_basis[k][i] = dx
                        * match mode {
                            Derivative::Value => (kp * x).sin(),
                            Derivative::DDy => kp * (kp * x).cos(),
                        };
                }
            }
            let mut coeff = vec![0.0; modes];
            let decay: Vec<f64> = (1..=modes)
                .map(|k| {
                    let mu = (k as f64 * PI).powi(2);
                    (-mu * dt).exp()
                })
                .collect();
            let weight: Vec<f64> = (1..=modes)
                .map(|k| {
                    let mu = (k as f64 * PI).powi(2);
                    -(-mu * dt).exp_m1() / mu
                })
                .collect();
            for n in 1..=nt {
                let src = &averaged[n - 1];
                for k in 0..modes {
                    let proj: f64 = in_basis[k].iter().zip(src).map(|(b, s)| b * s).sum();
                    coeff[k] = decay[k] * coeff[k] + weight[k] * proj;
                }
                let dst = out[n].values_mut();
                for k in 0..modes {
                    let c = coeff[k];
                    if c != 0.0 {
                        for (d, b) in dst.iter_mut().zip(&out_basis[k]) {
                            *d += c * b;
                        }
                    }
                }
            }
        }
        Boundary::FreeSpace => {
            for n in 1..=nt {
                let dst = out[n].values_mut();
                for (m, src) in averaged.iter().enumerate().take(n) {
                    let lag = (n - m) as f64 * dt - 0.5 * dt;
                    for (i, d) in dst.iter_mut().enumerate() {
                        let x = grid.x(i);
                        let mut acc = 0.0;
                        for (j, s) in src.iter().enumerate() {
                            acc += kernel.eval_unchecked(lag, x, grid.x(j), mode) * s;
                        }
                        *d += dt * dx * acc;
                    }
                }
            }
        }
    }
    Field::new(grid, out)
}

/// Smallest `C` with `||J(v)(t)||_{L^2} <= C int_0^t (t-s)^(-3/4) ||v(s)||_{L^1} ds`
/// at every positive time level, for `jv = J(v)`.
///
/// The right-hand side is integrated exactly for `||v||_{L^1}` piecewise
/// constant on time steps.
pub fn smoothing_constant(v: &Field, jv: &Field) -> Result<f64> {
    let grid = *v.grid();
    grid.ensure_same(jv.grid())?;
    let dt = grid.dt();
    let l1: Vec<f64> = v
        .profiles()
        .iter()
        .map(|p| grid.dx() * p.values().iter().map(|a| a.abs()).sum::<f64>())
        .collect();
    let mut best = 0.0_f64;
    for n in 1..=grid.nt() {
        let tn = grid.t(n);
        let mut rhs = 0.0;
        for m in 0..n {
            let a = tn - m as f64 * dt;
            let b = tn - (m + 1) as f64 * dt;
            rhs += 0.5 * (l1[m] + l1[m + 1]) * 4.0 * (a.powf(0.25) - b.max(0.0).powf(0.25));
        }
        let lhs = jv.profile(n).h_norm(&grid);
        if rhs > 0.0 {
            best = best.max(lhs / rhs);
        } else if lhs > 0.0 {
            return Ok(f64::INFINITY);
        }
    }
    Ok(best)
}

/// Fitted constant of a power-law moment bound, e.g. `int G_t^r dy <= C t^q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentFit {
    pub exponent_r: f64,
    pub derivative: Derivative,
    /// Power of `t` in the bound.
    pub time_power: f64,
    /// Smallest constant valid at every sampled `(t, x)`.
    pub constant: f64,
    /// Ratio of largest to smallest per-sample constant; stays bounded when
    /// the power law is the right one.
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub boundary: Boundary,
    /// Free space: `max |int_R G dy - 1|`. Dirichlet: distance of
    /// `int_0^1 G dy` from `(0, 1]`.
    pub mass_defect: f64,
    /// Measured `int G^2 dy` divided by `(2 pi t)^(-1/2)`, largest over samples.
    pub l2_mass_ratio: f64,
    /// Measured `int G^2 dy` divided by `(8 pi t)^(-1/2)`, largest over samples.
    pub l2_mass_ratio_convention: f64,
    pub semigroup_defect: f64,
    pub symmetry_defect: f64,
    /// Largest relative gap between `d/dy` and centered differences of `G`.
    pub derivative_fd_defect: f64,
    /// Smallest `C` with `|dG/dy| <= C t^-1 exp(-(x-y)^2 / (8t))` on the samples.
    pub derivative_bound_margin: f64,
    pub lp_moment_fits: Vec<MomentFit>,
    pub mass_ok: bool,
    pub semigroup_ok: bool,
    pub symmetry_ok: bool,
    pub derivative_fd_ok: bool,
    pub derivative_bound_ok: bool,
    pub moments_ok: bool,
    /// False when the measured `int G^2` disagrees with `(2 pi t)^(-1/2)`.
    pub l2_matches_claimed_constant: bool,
}

pub const MASS_TOLERANCE: f64 = 1e-10;
pub const SEMIGROUP_TOLERANCE: f64 = 1e-6;
pub const DERIVATIVE_FD_TOLERANCE: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;
const MOMENT_SPREAD_LIMIT: f64 = 10.0;

/// Trapezoid rule with `n` intervals. Spectrally accurate for the rapidly
/// decaying and trigonometric integrands used here.
fn trapezoid(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (b - a) / n as f64;
    let mut acc = 0.5 * (f(a) + f(b));
    for j in 1..n {
        acc += f(a + j as f64 * h);
    }
    acc * h
}

fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for j in 1..n {
        let w = if j % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + j as f64 * h);
    }
    acc * h / 3.0
}

impl HeatKernel {
    /// `int f(G_t(x, y)) dy` over the natural domain: a window of half-width
    /// `16 sqrt(t)` around `x` for free space, `[0, 1]` for Dirichlet.
    fn integrate_y(&self, t: f64, x: f64, f: impl Fn(f64) -> f64) -> f64 {
        match self.boundary {
            Boundary::FreeSpace => {
                let w = 16.0 * t.sqrt();
                trapezoid(x - w, x + w, 4000, f)
            }
            Boundary::Dirichlet => simpson(0.0, 1.0, 8192, f),
        }
    }
}

pub fn kernel_property_report(
    kernel: &HeatKernel,
    t_samples: &[f64],
    x_samples: &[f64],
) -> Result<KernelReport> {
    if t_samples.is_empty() || x_samples.is_empty() {
        return Err(invalid("kernel report needs nonempty sample sets"));
    }
    if let Some(t) = t_samples.iter().find(|t| !(**t > 0.0)) {
        return Err(invalid(format!("kernel sample time must be positive, got {t}")));
    }
    let k = *kernel;
    let g = |t: f64, x: f64, y: f64| k.eval_unchecked(t, x, y, Derivative::Value);
    let dg = |t: f64, x: f64, y: f64| k.eval_unchecked(t, x, y, Derivative::DDy);

    let mut mass_defect = 0.0_f64;
    let mut l2_ratio = 0.0_f64;
    let mut l2_ratio_conv = 0.0_f64;
    for &t in t_samples {
        for &x in x_samples {
            let mass = k.integrate_y(t, x, |y| g(t, x, y));
            let defect = match k.boundary {
                Boundary::FreeSpace => (mass - 1.0).abs(),
                Boundary::Dirichlet => (mass - 1.0).max(0.0) + (-mass).max(0.0),
            };
            mass_defect = mass_defect.max(defect);
            let l2 = k.integrate_y(t, x, |y| g(t, x, y).powi(2));
            l2_ratio = l2_ratio.max(l2 / (2.0 * PI * t).powf(-0.5));
            l2_ratio_conv = l2_ratio_conv.max(l2 / (8.0 * PI * t).powf(-0.5));
        }
    }

    // Chapman-Kolmogorov on pairs of sample times.
    let mut semigroup_defect = 0.0_f64;
    for &t in t_samples {
        for &s in t_samples {
            for &x in x_samples {
                for &z in x_samples {
                    let lhs = match k.boundary {
                        Boundary::FreeSpace => {
                            let w = 16.0 * (t.max(s)).sqrt();
                            let c = 0.5 * (x + z);
                            trapezoid(c - w - (x - z).abs(), c + w + (x - z).abs(), 8000, |y| {
                                g(t, x, y) * g(s, y, z)
                            })
                        }
                        // Products of truncated sine series are trigonometric
                        // polynomials, which the trapezoid rule integrates exactly.
                        Boundary::Dirichlet => {
                            trapezoid(0.0, 1.0, 4 * k.truncation.max(64), |y| {
                                g(t, x, y) * g(s, y, z)
                            })
                        }
                    };
                    semigroup_defect = semigroup_defect.max((lhs - g(t + s, x, z)).abs());
                }
            }
        }
    }

    let mut symmetry_defect = 0.0_f64;
    let mut fd_defect = 0.0_f64;
    let mut bound_consts = Vec::new();
    for &t in t_samples {
        let mut max_deriv = 0.0_f64;
        let mut max_gap = 0.0_f64;
        let mut per_t_bound = 0.0_f64;
        for &x in x_samples {
            for &y in x_samples {
                symmetry_defect = symmetry_defect.max((g(t, x, y) - g(t, y, x)).abs());
                let analytic = dg(t, x, y);
                let fd = (g(t, x, y + FD_STEP) - g(t, x, y - FD_STEP)) / (2.0 * FD_STEP);
                max_deriv = max_deriv.max(analytic.abs());
                max_gap = max_gap.max((fd - analytic).abs());
                let envelope = (-(x - y).powi(2) / (8.0 * t)).exp() / t;
                per_t_bound = per_t_bound.max(analytic.abs() / envelope);
            }
        }
        if max_deriv > 0.0 {
            fd_defect = fd_defect.max(max_gap / max_deriv);
        }
        bound_consts.push(per_t_bound);
    }
    let derivative_bound = bound_consts.iter().cloned().fold(0.0, f64::max);
    let derivative_bound_min = bound_consts.iter().cloned().fold(f64::INFINITY, f64::min);
    let derivative_bound_ok = derivative_bound.is_finite()
        && derivative_bound_min > 0.0
        && derivative_bound / derivative_bound_min <= MOMENT_SPREAD_LIMIT;

    let mut fits = Vec::new();
    for &r in &[0.5, 1.0, 1.5, 2.0, 2.5] {
        fits.push(moment_fit(&k, t_samples, x_samples, r, Derivative::Value));
    }
    for &r in &[0.5, 1.0, 1.25] {
        fits.push(moment_fit(&k, t_samples, x_samples, r, Derivative::DDy));
    }
    let moments_ok = fits
        .iter()
        .all(|f| f.constant.is_finite() && f.spread <= MOMENT_SPREAD_LIMIT);

    Ok(KernelReport {
        boundary: k.boundary,
        mass_defect,
        l2_mass_ratio: l2_ratio,
        l2_mass_ratio_convention: l2_ratio_conv,
        semigroup_defect,
        symmetry_defect,
        derivative_fd_defect: fd_defect,
        derivative_bound_margin: derivative_bound,
        lp_moment_fits: fits,
        mass_ok: mass_defect < MASS_TOLERANCE,
        semigroup_ok: semigroup_defect < SEMIGROUP_TOLERANCE,
        symmetry_ok: symmetry_defect == 0.0,
        derivative_fd_ok: fd_defect < DERIVATIVE_FD_TOLERANCE,
        derivative_bound_ok,
        moments_ok,
        l2_matches_claimed_constant: (l2_ratio - 1.0).abs() < 1e-3,
    })
}

fn moment_fit(
    k: &HeatKernel,
    t_samples: &[f64],
    x_samples: &[f64],
    r: f64,
    derivative: Derivative,
) -> MomentFit {
    let time_power = match derivative {
        Derivative::Value => 0.5 - 0.5 * r,
        Derivative::DDy => 0.5 - r,
    };
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for &t in t_samples {
        for &x in x_samples {
            let m = k.integrate_y(t, x, |y| k.eval_unchecked(t, x, y, derivative).abs().powf(r));
            let c = m / t.powf(time_power);
            lo = lo.min(c);
            hi = hi.max(c);
        }
    }
    MomentFit {
        exponent_r: r,
        derivative,
        time_power,
        constant: hi,
        spread: if lo > 0.0 { hi / lo } else { f64::INFINITY },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dirichlet_vanishes_on_boundary() {
        let k = HeatKernel::dirichlet(64).unwrap();
        for &t in &[1e-3, 0.1, 1.0] {
            for &y in &[0.1, 0.5, 0.77] {
                assert_eq!(k.eval(t, 0.0, y, Derivative::Value).unwrap(), 0.0);
                assert!(k.eval(t, 1.0, y, Derivative::Value).unwrap().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_in_space_arguments() {
        for k in [HeatKernel::free_space(), HeatKernel::dirichlet(64).unwrap()] {
            for &(x, y) in &[(0.1, 0.3), (0.5, 0.51), (0.9, 0.2)] {
                let a = k.eval(0.01, x, y, Derivative::Value).unwrap();
                let b = k.eval(0.01, y, x, Derivative::Value).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn free_space_peak_value() {
        let k = HeatKernel::free_space();
        let t = 1.0 / (4.0 * PI);
        assert!((k.eval(t, 0.3, 0.3, Derivative::Value).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_time_rejected() {
        let k = HeatKernel::free_space();
        assert!(k.eval(0.0, 0.1, 0.2, Derivative::Value).is_err());
        assert!(k.eval(-1.0, 0.1, 0.2, Derivative::DDy).is_err());
        assert!(HeatKernel::dirichlet(0).is_err());
    }

    #[test]
    fn free_space_report_flags_l2_constant() {
        let r = kernel_property_report(&HeatKernel::free_space(), &[0.01], &[0.3, 0.5]).unwrap();
        assert!(r.mass_defect < 1e-10, "{}", r.mass_defect);
        assert!((r.l2_mass_ratio - 0.5).abs() < 1e-9, "{}", r.l2_mass_ratio);
        assert!((r.l2_mass_ratio_convention - 1.0).abs() < 1e-9);
        assert!(!r.l2_matches_claimed_constant);
    }

    #[test]
    fn dirichlet_mass_in_unit_interval() {
        let k = HeatKernel::dirichlet(128).unwrap();
        let mut prev = 0.0;
        for &t in &[0.2, 0.05, 0.01, 0.002] {
            let m = simpson(0.0, 1.0, 8192, |y| k.eval_unchecked(t, 0.4, y, Derivative::Value));
            assert!(m > 0.0 && m <= 1.0 + 1e-9, "t={t} mass={m}");
            assert!(m > prev);
            prev = m;
        }
        assert!(prev > 0.999);
    }

    #[test]
    fn empty_samples_rejected() {
        let k = HeatKernel::free_space();
        assert!(kernel_property_report(&k, &[], &[0.5]).is_err());
        assert!(kernel_property_report(&k, &[0.1], &[]).is_err());
        assert!(kernel_property_report(&k, &[0.0], &[0.5]).is_err());
    }
}
