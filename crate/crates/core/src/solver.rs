//! Finite-difference solvers for the semilinear equation, its deterministic
//! limit, the linearization around the limit, the skeleton (controlled
//! linearization) and the controlled moderate-deviation equation.
//!
//! Every solver advances `t_n -> t_{n+1}` with the same step
//!
//! ```text
//! (I - theta dt A) u^{n+1} = (I + (1 - theta) dt A) u^n + dt F(u^n) + S(u^n) dW_n / dx
//! ```
//!
//! where `A` is the three-point Dirichlet Laplacian, `F` collects the drift and
//! the discrete flux divergence, and `S` the noise intensity. Coefficients are
//! explicit and evaluated at `t_n`. Sharing the step keeps couplings through a
//! common noise lattice exact: in the additive case `(u^eps - u^0)/sqrt(eps)`
//! and the linearized solution agree to rounding.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::error::{invalid, Error, Result};
use crate::lattice::{Field, Profile, SpaceTimeGrid};
use crate::noise::{Control, NoiseLattice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxForm {
    /// `(g_{i+1} - g_{i-1}) / (2 dx)`
    #[default]
    CenteredConservative,
    /// One-sided difference taken from the side the characteristic comes from.
    Upwind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemeConfig {
    pub theta: f64,
    pub flux_form: FluxForm,
    pub epsilon: f64,
    pub lambda: f64,
    pub stop_radius: Option<f64>,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            theta: 1.0,
            flux_form: FluxForm::CenteredConservative,
            epsilon: 0.0,
            lambda: 1.0,
            stop_radius: None,
        }
    }
}

impl SchemeConfig {
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn validate(&self, grid: &SpaceTimeGrid) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(invalid(format!("theta must lie in [0, 1], got {}", self.theta)));
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(invalid(format!("epsilon must be nonnegative, got {}", self.epsilon)));
        }
        if let Some(r) = self.stop_radius {
            if !(r > 0.0) {
                return Err(invalid(format!("stop radius must be positive, got {r}")));
            }
        }
        // theta >= 1/2 is unconditionally stable for the heat part; below that
        // the explicit CFL condition is required.
        if self.theta < 0.5 && !grid.explicit_stable() {
            return Err(invalid(format!(
                "theta={} needs dt <= dx^2/2 (dt={}, dx={})",
                self.theta,
                grid.dt(),
                grid.dx()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    Deterministic,
    Perturbed,
    Linearized,
    Skeleton,
    Controlled,
}

/// A solved trajectory on the full lattice.
#[derive(Debug, Clone)]
pub struct PathResult {
    pub kind: PathKind,
    pub field: Field,
    /// First lattice time with `||u(t)||_H > R` for the scheme's stop radius,
    /// else the horizon.
    pub exit_time: f64,
    /// `||u(t_n)||_H` for `n = 0..=nt`.
    pub h_norms: Vec<f64>,
    pub scheme: SchemeConfig,
    /// Noise driving the path and the factor in front of it, when present.
    pub forcing: Option<(Arc<NoiseLattice>, f64)>,
}

impl PathResult {
    fn build(
        kind: PathKind,
        field: Field,
        scheme: SchemeConfig,
        forcing: Option<(Arc<NoiseLattice>, f64)>,
    ) -> Self {
        let h_norms = field.h_norms();
        let exit_time = match scheme.stop_radius {
            Some(r) => exit_time_from_norms(&h_norms, field.grid(), r),
            None => field.grid().horizon(),
        };
        Self {
            kind,
            field,
            exit_time,
            h_norms,
            scheme,
            forcing,
        }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        self.field.grid()
    }

    pub fn terminal(&self) -> &Profile {
        self.field.terminal()
    }

    pub fn sup_h_norm(&self) -> f64 {
        self.h_norms.iter().cloned().fold(0.0, f64::max)
    }
}

fn exit_time_from_norms(norms: &[f64], grid: &SpaceTimeGrid, radius: f64) -> f64 {
    norms
        .iter()
        .position(|&v| v > radius)
        .map_or(grid.horizon(), |n| grid.t(n))
}

/// First lattice time at which `||u(t)||_H > radius`; the horizon if never.
pub fn exit_time(path: &PathResult, radius: f64) -> f64 {
    exit_time_from_norms(&path.h_norms, path.grid(), radius)
}

/// The constant heat-step operators: `M = I - theta dt A`, factored once, and
/// `N = I + (1 - theta) dt A`.
#[derive(Debug, Clone)]
pub(crate) struct HeatStep {
    nx: usize,
    // Thomas factors of M (symmetric Toeplitz).
    off: f64,
    c_prime: Vec<f64>,
    inv_denom: Vec<f64>,
    // N = explicit_diag on the diagonal, explicit_off next to it.
    explicit_diag: f64,
    explicit_off: f64,
}

impl HeatStep {
    pub(crate) fn new(grid: &SpaceTimeGrid, theta: f64) -> Self {
        let nx = grid.nx();
        let r = grid.dt() / (grid.dx() * grid.dx());
        let diag = 1.0 + 2.0 * theta * r;
        let off = -theta * r;
        let mut c_prime = vec![0.0; nx];
        let mut inv_denom = vec![0.0; nx];
        let mut prev_c = 0.0;
        for i in 0..nx {
            let denom = diag - off * prev_c;
            inv_denom[i] = 1.0 / denom;
            c_prime[i] = off / denom;
            prev_c = c_prime[i];
        }
        Self {
            nx,
            off,
            c_prime,
            inv_denom,
            explicit_diag: 1.0 - 2.0 * (1.0 - theta) * r,
            explicit_off: (1.0 - theta) * r,
        }
    }

    /// `out = N u` (zero Dirichlet boundary).
    #[inline]
    pub(crate) fn apply_explicit(&self, u: &[f64], out: &mut [f64]) {
        let n = self.nx;
        if self.explicit_off == 0.0 {
            out.copy_from_slice(u);
            return;
        }
        for i in 0..n {
            let left = if i > 0 { u[i - 1] } else { 0.0 };
            let right = if i + 1 < n { u[i + 1] } else { 0.0 };
            out[i] = self.explicit_diag * u[i] + self.explicit_off * (left + right);
        }
    }

    /// In place `rhs <- M^{-1} rhs`. `M` is symmetric, so this is also the
    /// transpose solve.
    #[inline]
    pub(crate) fn solve_implicit(&self, rhs: &mut [f64]) {
        let n = self.nx;
        let mut prev = 0.0;
        for i in 0..n {
            let v = (rhs[i] - self.off * prev) * self.inv_denom[i];
            rhs[i] = v;
            prev = v;
        }
        for i in (0..n.saturating_sub(1)).rev() {
            rhs[i] -= self.c_prime[i] * rhs[i + 1];
        }
    }
}

/// Adds `dt * D(flux)` to `out`, where `flux_left`/`flux_right` are the flux
/// values on the two boundary nodes and `speed` decides the upwind side.
#[inline]
fn add_flux_divergence(
    form: FluxForm,
    flux: &[f64],
    flux_left: f64,
    flux_right: f64,
    speed: impl Fn(usize) -> f64,
    scale: f64,
    out: &mut [f64],
) {
    let n = flux.len();
    let at = |j: isize| -> f64 {
        if j < 0 {
            flux_left
        } else if j as usize >= n {
            flux_right
        } else {
            flux[j as usize]
        }
    };
    match form {
        FluxForm::CenteredConservative => {
            let c = 0.5 * scale;
            for i in 0..n {
                let ii = i as isize;
                out[i] += c * (at(ii + 1) - at(ii - 1));
            }
        }
        FluxForm::Upwind => {
            for i in 0..n {
                let ii = i as isize;
                out[i] += if speed(i) >= 0.0 {
                    scale * (at(ii + 1) - flux[i])
                } else {
                    scale * (flux[i] - at(ii - 1))
                };
            }
        }
    }
}

fn check_finite(values: &[f64], solver: &'static str, step: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { solver, step })
    }
}

fn ensure_profile(f: &Profile, grid: &SpaceTimeGrid) -> Result<()> {
    if f.len() != grid.nx() {
        return Err(invalid(format!(
            "initial profile has {} nodes, grid has {}",
            f.len(),
            grid.nx()
        )));
    }
    Ok(())
}

/// Deterministic limit `u^0`: `u_t = u_xx + b(u) + d/dx g(u)`.
pub fn solve_deterministic(
    f: &Profile,
    coeffs: &CoefficientSet,
    grid: &SpaceTimeGrid,
    scheme: &SchemeConfig,
) -> Result<PathResult> {
    let mut path = solve_semilinear(f, coeffs, grid, scheme, None, "solve_deterministic")?;
    path.kind = PathKind::Deterministic;
    Ok(path)
}

/// Small-noise equation `u^eps`: adds `sqrt(eps) sigma(u) dW / dx` per step.
pub fn solve_spde(
    f: &Profile,
    coeffs: &CoefficientSet,
    grid: &SpaceTimeGrid,
    scheme: &SchemeConfig,
    noise: &Arc<NoiseLattice>,
) -> Result<PathResult> {
    grid.ensure_same(noise.grid())?;
    let scale = scheme.epsilon.sqrt();
    let forcing = (scale != 0.0).then(|| (Arc::clone(noise), scale));
    solve_semilinear(f, coeffs, grid, scheme, forcing, "solve_spde")
}

fn solve_semilinear(
    f: &Profile,
    coeffs: &CoefficientSet,
    grid: &SpaceTimeGrid,
    scheme: &SchemeConfig,
    forcing: Option<(Arc<NoiseLattice>, f64)>,
    name: &'static str,
) -> Result<PathResult> {
    scheme.validate(grid)?;
    ensure_profile(f, grid)?;
    let nx = grid.nx();
    let dt = grid.dt();
    let inv_dx = 1.0 / grid.dx();
    let heat = HeatStep::new(grid, scheme.theta);
    let xs: Vec<f64> = grid.nodes().collect();

    let mut profiles = Vec::with_capacity(grid.nt() + 1);
    profiles.push(f.clone());
    let mut u = f.values().to_vec();
    let mut rhs = vec![0.0; nx];
    let mut flux = vec![0.0; nx];
    for n in 0..grid.nt() {
        let t = grid.t(n);
        heat.apply_explicit(&u, &mut rhs);
        for i in 0..nx {
            rhs[i] += dt * (coeffs.b)(t, xs[i], u[i]);
            flux[i] = (coeffs.g)(t, xs[i], u[i]);
        }
        let g_left = (coeffs.g)(t, 0.0, 0.0);
        let g_right = (coeffs.g)(t, 1.0, 0.0);
        add_flux_divergence(
            scheme.flux_form,
            &flux,
            g_left,
            g_right,
            |i| (coeffs.dg_dr)(t, xs[i], u[i]),
            dt * inv_dx,
            &mut rhs,
        );
        if let Some((noise, scale)) = &forcing {
            let c = scale * inv_dx;
            for (i, dw) in noise.row(n).iter().enumerate() {
                rhs[i] += c * (coeffs.sigma)(t, xs[i], u[i]) * dw;
            }
        }
        heat.solve_implicit(&mut rhs);
        check_finite(&rhs, name, n + 1)?;
        std::mem::swap(&mut u, &mut rhs);
        profiles.push(Profile::new(u.clone()));
    }
    Ok(PathResult::build(
        PathKind::Perturbed,
        Field::new(*grid, profiles)?,
        *scheme,
        forcing,
    ))
}

/// Tridiagonal matrix stored by bands; `lower[i]` multiplies `v[i-1]` and
/// `upper[i]` multiplies `v[i+1]` in row `i`.
#[derive(Debug, Clone)]
struct Tridiagonal {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl Tridiagonal {
    #[inline]
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n = v.len();
        for i in 0..n {
            let mut acc = self.diag[i] * v[i];
            if i > 0 {
                acc += self.lower[i] * v[i - 1];
            }
            if i + 1 < n {
                acc += self.upper[i] * v[i + 1];
            }
            out[i] = acc;
        }
    }

    #[inline]
    fn apply_transpose(&self, v: &[f64], out: &mut [f64]) {
        let n = v.len();
        for i in 0..n {
            let mut acc = self.diag[i] * v[i];
            if i > 0 {
                acc += self.upper[i - 1] * v[i - 1];
            }
            if i + 1 < n {
                acc += self.lower[i + 1] * v[i + 1];
            }
            out[i] = acc;
        }
    }
}

/// The linearization of the step around a fixed deterministic path `u^0`:
///
/// ```text
/// M Y^{n+1} = T_n Y^n + forcing_n,
/// T_n = N + dt (diag(db/dr(u0_n)) + D diag(dg/dr(u0_n)))
/// ```
///
/// Built once per `u^0` and shared by the linearized, skeleton and adjoint
/// solves, so forward and adjoint use literally the same matrices.
#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    grid: SpaceTimeGrid,
    scheme: SchemeConfig,
    heat: HeatStep,
    steps: Vec<Tridiagonal>,
    /// `sigma(t_n, x_i, u0_n)` per step, row-major.
    sigma: Vec<f64>,
}

impl LinearizedOperator {
    pub fn new(
        u0_path: &PathResult,
        coeffs: &CoefficientSet,
        scheme: &SchemeConfig,
    ) -> Result<Self> {
        let grid = *u0_path.grid();
        scheme.validate(&grid)?;
        let nx = grid.nx();
        let dt = grid.dt();
        let inv_dx = 1.0 / grid.dx();
        let heat = HeatStep::new(&grid, scheme.theta);
        let xs: Vec<f64> = grid.nodes().collect();
        let mut steps = Vec::with_capacity(grid.nt());
        let mut sigma = Vec::with_capacity(grid.nt() * nx);
        for n in 0..grid.nt() {
            let t = grid.t(n);
            let u0 = u0_path.field.profile(n).values();
            let mut lower = vec![heat.explicit_off; nx];
            let mut diag = vec![heat.explicit_diag; nx];
            let mut upper = vec![heat.explicit_off; nx];
            let a: Vec<f64> = (0..nx).map(|i| (coeffs.dg_dr)(t, xs[i], u0[i])).collect();
            for i in 0..nx {
                diag[i] += dt * (coeffs.db_dr)(t, xs[i], u0[i]);
                sigma.push((coeffs.sigma)(t, xs[i], u0[i]));
            }
            let c = dt * inv_dx;
            match scheme.flux_form {
                FluxForm::CenteredConservative => {
                    for i in 0..nx {
                        if i > 0 {
                            lower[i] -= 0.5 * c * a[i - 1];
                        }
                        if i + 1 < nx {
                            upper[i] += 0.5 * c * a[i + 1];
                        }
                    }
                }
                FluxForm::Upwind => {
                    for i in 0..nx {
                        if a[i] >= 0.0 {
                            diag[i] -= c * a[i];
                            if i + 1 < nx {
                                upper[i] += c * a[i + 1];
                            }
                        } else {
                            diag[i] += c * a[i];
                            if i > 0 {
                                lower[i] -= c * a[i - 1];
                            }
                        }
                    }
                }
            }
            steps.push(Tridiagonal { lower, diag, upper });
        }
        Ok(Self {
            grid,
            scheme: *scheme,
            heat,
            steps,
            sigma,
        })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    #[inline]
    fn sigma_row(&self, n: usize) -> &[f64] {
        let nx = self.grid.nx();
        &self.sigma[n * nx..(n + 1) * nx]
    }

    /// Runs the forward recursion from zero with forcing supplied per step.
    fn run(
        &self,
        name: &'static str,
        mut add_forcing: impl FnMut(usize, &[f64], &mut [f64]),
    ) -> Result<Field> {
        let nx = self.grid.nx();
        let mut y = vec![0.0; nx];
        let mut rhs = vec![0.0; nx];
        let mut profiles = Vec::with_capacity(self.grid.nt() + 1);
        profiles.push(Profile::zeros(nx));
        for (n, step) in self.steps.iter().enumerate() {
            step.apply(&y, &mut rhs);
            add_forcing(n, self.sigma_row(n), &mut rhs);
            self.heat.solve_implicit(&mut rhs);
            check_finite(&rhs, name, n + 1)?;
            std::mem::swap(&mut y, &mut rhs);
            profiles.push(Profile::new(y.clone()));
        }
        Field::new(self.grid, profiles)
    }

    /// `Y`, driven by `sigma(u^0) dW / dx`.
    pub fn solve_noise(&self, noise: &Arc<NoiseLattice>) -> Result<PathResult> {
        self.grid.ensure_same(noise.grid())?;
        let c = 1.0 / self.grid.dx();
        let field = self.run("solve_linearized", |n, sigma, rhs| {
            for ((r, s), dw) in rhs.iter_mut().zip(sigma).zip(noise.row(n)) {
                *r += c * s * dw;
            }
        })?;
        Ok(PathResult::build(
            PathKind::Linearized,
            field,
            self.scheme,
            Some((Arc::clone(noise), 1.0)),
        ))
    }

    /// `X^h`, driven by `sigma(u^0) h dt`.
    pub fn solve_control(&self, h: &Control) -> Result<PathResult> {
        self.grid.ensure_same(h.grid())?;
        let dt = self.grid.dt();
        let field = self.run("solve_skeleton", |n, sigma, rhs| {
            for ((r, s), hv) in rhs.iter_mut().zip(sigma).zip(h.row(n)) {
                *r += dt * s * hv;
            }
        })?;
        Ok(PathResult::build(PathKind::Skeleton, field, self.scheme, None))
    }

    /// `X^h(T)` without storing the trajectory.
    pub fn terminal_response(&self, h: &Control) -> Result<Profile> {
        self.grid.ensure_same(h.grid())?;
        let nx = self.grid.nx();
        let dt = self.grid.dt();
        let mut y = vec![0.0; nx];
        let mut rhs = vec![0.0; nx];
        for (n, step) in self.steps.iter().enumerate() {
            step.apply(&y, &mut rhs);
            for ((r, s), hv) in rhs.iter_mut().zip(self.sigma_row(n)).zip(h.row(n)) {
                *r += dt * s * hv;
            }
            self.heat.solve_implicit(&mut rhs);
            std::mem::swap(&mut y, &mut rhs);
        }
        check_finite(&y, "apply_forward", self.grid.nt())?;
        Ok(Profile::new(y))
    }

    /// Exact transpose of [`terminal_response`](Self::terminal_response) with
    /// respect to the `H` inner product on profiles and the `L^2` inner
    /// product on controls.
    pub fn adjoint_response(&self, mu: &Profile) -> Result<Control> {
        self.adjoint_sweep(mu, |_, _| {})
    }

    /// Adjoint response together with the backward trajectory `p_n`,
    /// `p_nt = mu`, `p_n = T_n^T M^{-1} p_{n+1}`.
    pub fn adjoint_trajectory(&self, mu: &Profile) -> Result<(Control, Field)> {
        let mut levels = vec![Profile::zeros(self.grid.nx()); self.grid.nt() + 1];
        let control = self.adjoint_sweep(mu, |n, p| levels[n] = Profile::new(p.to_vec()))?;
        Ok((control, Field::new(self.grid, levels)?))
    }

    fn adjoint_sweep(&self, mu: &Profile, mut visit: impl FnMut(usize, &[f64])) -> Result<Control> {
        let nx = self.grid.nx();
        if mu.len() != nx {
            return Err(invalid(format!(
                "multiplier has {} nodes, grid has {}",
                mu.len(),
                nx
            )));
        }
        let nt = self.grid.nt();
        let mut p = mu.values().to_vec();
        let mut q = vec![0.0; nx];
        let mut values = vec![0.0; nt * nx];
        visit(nt, &p);
        for n in (0..nt).rev() {
            q.copy_from_slice(&p);
            self.heat.solve_implicit(&mut q);
            let row = &mut values[n * nx..(n + 1) * nx];
            for ((v, s), qi) in row.iter_mut().zip(self.sigma_row(n)).zip(&q) {
                *v = s * qi;
            }
            self.steps[n].apply_transpose(&q, &mut p);
            visit(n, &p);
        }
        Control::new(self.grid, values)
    }
}

/// Linearized equation `Y` around `u^0` with the given noise.
pub fn solve_linearized(
    u0_path: &PathResult,
    coeffs: &CoefficientSet,
    scheme: &SchemeConfig,
    noise: &Arc<NoiseLattice>,
) -> Result<PathResult> {
    LinearizedOperator::new(u0_path, coeffs, scheme)?.solve_noise(noise)
}

/// Skeleton equation `X^h` around `u^0`.
pub fn solve_skeleton(
    u0_path: &PathResult,
    coeffs: &CoefficientSet,
    scheme: &SchemeConfig,
    h: &Control,
) -> Result<PathResult> {
    LinearizedOperator::new(u0_path, coeffs, scheme)?.solve_control(h)
}

/// Controlled equation for `Xbar^{eps,h}` with `kappa = sqrt(eps) lambda`:
///
/// ```text
/// Xbar_t = Xbar_xx + (b(u0 + kappa Xbar) - b(u0)) / kappa
///        + d/dx (g(u0 + kappa Xbar) - g(u0)) / kappa
///        + sigma(u0 + kappa Xbar) h + sigma(u0 + kappa Xbar) dW / lambda
/// ```
///
/// On the lattice this equals `(u^eps[W + lambda h] - u^0) / kappa` up to rounding.
pub fn solve_controlled(
    u0_path: &PathResult,
    coeffs: &CoefficientSet,
    scheme: &SchemeConfig,
    noise: &Arc<NoiseLattice>,
    h: &Control,
) -> Result<PathResult> {
    let grid = *u0_path.grid();
    scheme.validate(&grid)?;
    grid.ensure_same(noise.grid())?;
    grid.ensure_same(h.grid())?;
    if !(scheme.lambda > 0.0) {
        return Err(invalid("controlled equation needs lambda > 0"));
    }
    if !(scheme.epsilon > 0.0) {
        return Err(invalid("controlled equation needs epsilon > 0"));
    }
    let kappa = scheme.epsilon.sqrt() * scheme.lambda;
    let inv_kappa = 1.0 / kappa;
    let inv_lambda = 1.0 / scheme.lambda;
    let nx = grid.nx();
    let dt = grid.dt();
    let inv_dx = 1.0 / grid.dx();
    let heat = HeatStep::new(&grid, scheme.theta);
    let xs: Vec<f64> = grid.nodes().collect();

    let mut profiles = Vec::with_capacity(grid.nt() + 1);
    profiles.push(Profile::zeros(nx));
    let mut x = vec![0.0; nx];
    let mut rhs = vec![0.0; nx];
    let mut flux = vec![0.0; nx];
    let mut state = vec![0.0; nx];
    for n in 0..grid.nt() {
        let t = grid.t(n);
        let u0 = u0_path.field.profile(n).values();
        heat.apply_explicit(&x, &mut rhs);
        for i in 0..nx {
            let v = u0[i] + kappa * x[i];
            state[i] = v;
            let db = ((coeffs.b)(t, xs[i], v) - (coeffs.b)(t, xs[i], u0[i])) * inv_kappa;
            flux[i] = ((coeffs.g)(t, xs[i], v) - (coeffs.g)(t, xs[i], u0[i])) * inv_kappa;
            rhs[i] += dt * db;
        }
        add_flux_divergence(
            scheme.flux_form,
            &flux,
            0.0,
            0.0,
            |i| (coeffs.dg_dr)(t, xs[i], state[i]),
            dt * inv_dx,
            &mut rhs,
        );
        let c = inv_lambda * inv_dx;
        for (i, (dw, hv)) in noise.row(n).iter().zip(h.row(n)).enumerate() {
            let s = (coeffs.sigma)(t, xs[i], state[i]);
            rhs[i] += dt * s * hv + c * s * dw;
        }
        heat.solve_implicit(&mut rhs);
        check_finite(&rhs, "solve_controlled", n + 1)?;
        std::mem::swap(&mut x, &mut rhs);
        profiles.push(Profile::new(x.clone()));
    }
    Ok(PathResult::build(
        PathKind::Controlled,
        Field::new(grid, profiles)?,
        *scheme,
        Some((Arc::clone(noise), inv_lambda)),
    ))
}

/// `sin(k pi x)` sampled on the grid for `k = 1..=count`.
pub fn sine_test_profiles(grid: &SpaceTimeGrid, count: usize) -> Vec<Profile> {
    (1..=count)
        .map(|k| grid.profile_from_fn(|x| (k as f64 * std::f64::consts::PI * x).sin()))
        .collect()
}

/// Largest lattice residual of the weak form of the semilinear equation,
///
/// ```text
/// <u(t), phi> - <f, phi> - int_0^t [<u, phi''> + <b(u), phi> + <D g(u), phi>] ds
///     - scale * int_0^t int sigma(u) phi dW
/// ```
///
/// over the time levels and test profiles. Time integrals use left-point
/// sums, `phi''` the three-point Laplacian and `D` the path's flux operator,
/// so the residual measures the time discretization error of the path.
pub fn weak_form_residual(
    path: &PathResult,
    coeffs: &CoefficientSet,
    test_profiles: &[Profile],
) -> Result<f64> {
    let grid = *path.grid();
    let nx = grid.nx();
    let dt = grid.dt();
    let dx = grid.dx();
    let inv_dx2 = 1.0 / (dx * dx);
    let xs: Vec<f64> = grid.nodes().collect();
    for phi in test_profiles {
        ensure_profile(phi, &grid)?;
    }
    let lap: Vec<Vec<f64>> = test_profiles
        .iter()
        .map(|phi| {
            let v = phi.values();
            (0..nx)
                .map(|i| {
                    let l = if i > 0 { v[i - 1] } else { 0.0 };
                    let r = if i + 1 < nx { v[i + 1] } else { 0.0 };
                    (l - 2.0 * v[i] + r) * inv_dx2
                })
                .collect()
        })
        .collect();

    let dot = |a: &[f64], b: &[f64]| dx * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let initial: Vec<f64> = test_profiles
        .iter()
        .map(|phi| dot(path.field.initial().values(), phi.values()))
        .collect();
    let mut integral = vec![0.0; test_profiles.len()];
    let mut worst = 0.0_f64;
    let mut drift = vec![0.0; nx];
    let mut flux = vec![0.0; nx];
    for n in 0..grid.nt() {
        let t = grid.t(n);
        let u = path.field.profile(n).values();
        drift.iter_mut().for_each(|d| *d = 0.0);
        for i in 0..nx {
            drift[i] = (coeffs.b)(t, xs[i], u[i]);
            flux[i] = (coeffs.g)(t, xs[i], u[i]);
        }
        add_flux_divergence(
            path.scheme.flux_form,
            &flux,
            (coeffs.g)(t, 0.0, 0.0),
            (coeffs.g)(t, 1.0, 0.0),
            |i| (coeffs.dg_dr)(t, xs[i], u[i]),
            1.0 / dx,
            &mut drift,
        );
        for (k, phi) in test_profiles.iter().enumerate() {
            let mut step = dt * (dot(u, &lap[k]) + dot(&drift, phi.values()));
            if let Some((noise, scale)) = &path.forcing {
                let s: f64 = (0..nx)
                    .map(|i| (coeffs.sigma)(t, xs[i], u[i]) * noise.row(n)[i] * phi.values()[i])
                    .sum();
                step += scale * s;
            }
            integral[k] += step;
        }
        let next = path.field.profile(n + 1).values();
        for (k, phi) in test_profiles.iter().enumerate() {
            let r = dot(next, phi.values()) - initial[k] - integral[k];
            worst = worst.max(r.abs());
        }
    }
    Ok(worst)
}
