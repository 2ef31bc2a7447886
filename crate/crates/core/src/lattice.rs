//! Uniform space-time lattice on `[0, T] x [0, 1]` and the norms of
//! `L^p([0, 1])` and `C([0, T]; L^p)` evaluated on it.
//!
//! Only interior nodes `x_i = i * dx`, `i = 1..=nx`, are stored. The Dirichlet
//! boundary values are identically zero and never materialized.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    nx: usize,
    nt: usize,
    horizon: f64,
    dx: f64,
    dt: f64,
    explicit_stable: bool,
}

impl SpaceTimeGrid {
    pub fn new(nx: usize, nt: usize, horizon: f64) -> Result<Self> {
        if nx == 0 {
            return Err(invalid("nx must be at least 1"));
        }
        if nt == 0 {
            return Err(invalid("nt must be at least 1"));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(format!("horizon T must be positive, got {horizon}")));
        }
        let dx = 1.0 / (nx + 1) as f64;
        let dt = horizon / nt as f64;
        Ok(Self {
            nx,
            nt,
            horizon,
            dx,
            dt,
            explicit_stable: dt <= 0.5 * dx * dx,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `dt <= dx^2 / 2`: the explicit Laplacian step is stable on this grid.
    pub fn explicit_stable(&self) -> bool {
        self.explicit_stable
    }

    /// Position of interior node `i` (zero based).
    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.dx
    }

    #[inline]
    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.nx).map(move |i| self.x(i))
    }

    /// Samples `f` at the interior nodes.
    pub fn profile_from_fn(&self, f: impl Fn(f64) -> f64) -> Profile {
        Profile::new(self.nodes().map(f).collect())
    }

    pub fn zero_profile(&self) -> Profile {
        Profile::zeros(self.nx)
    }

    /// Checks that `other` describes the same lattice.
    pub fn ensure_same(&self, other: &SpaceTimeGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(invalid(format!(
                "grid mismatch: (nx={}, nt={}, T={}) vs (nx={}, nt={}, T={})",
                self.nx, self.nt, self.horizon, other.nx, other.nt, other.horizon
            )))
        }
    }
}

/// Which norm to evaluate: `L^p` for finite `p >= 1`, or the sup norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    Lp(f64),
    Sup,
}

impl NormKind {
    pub const L2: NormKind = NormKind::Lp(2.0);

    fn validate(self) -> Result<Self> {
        match self {
            NormKind::Lp(p) if !(p >= 1.0) => Err(invalid(format!("norm exponent p={p} < 1"))),
            other => Ok(other),
        }
    }
}

/// Values at the interior nodes of a grid at one time level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    values: Vec<f64>,
}

impl Profile {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(nx: usize) -> Self {
        Self {
            values: vec![0.0; nx],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn scaled(&self, c: f64) -> Profile {
        Profile::new(self.values.iter().map(|v| c * v).collect())
    }

    /// `self + c * other`
    pub fn axpy(&self, c: f64, other: &Profile) -> Profile {
        debug_assert_eq!(self.len(), other.len());
        Profile::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + c * b)
                .collect(),
        )
    }

    /// `L^2([0,1])` inner product under midpoint weights `dx`.
    pub fn inner(&self, other: &Profile, grid: &SpaceTimeGrid) -> f64 {
        grid.dx()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    pub fn norm(&self, kind: NormKind, grid: &SpaceTimeGrid) -> Result<f64> {
        lp_norm(kind, self, grid)
    }

    pub fn h_norm(&self, grid: &SpaceTimeGrid) -> f64 {
        weighted_lp(&self.values, 2.0, grid.dx())
    }
}

/// Trajectory in `C([0,T]; H)`: one profile per time level `0..=nt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    grid: SpaceTimeGrid,
    profiles: Vec<Profile>,
}

impl Field {
    pub fn new(grid: SpaceTimeGrid, profiles: Vec<Profile>) -> Result<Self> {
        if profiles.len() != grid.nt() + 1 {
            return Err(invalid(format!(
                "field needs {} time levels, got {}",
                grid.nt() + 1,
                profiles.len()
            )));
        }
        if let Some(bad) = profiles.iter().position(|p| p.len() != grid.nx()) {
            return Err(invalid(format!(
                "profile {bad} has {} nodes, grid has {}",
                profiles[bad].len(),
                grid.nx()
            )));
        }
        Ok(Self { grid, profiles })
    }

    pub fn zeros(grid: SpaceTimeGrid) -> Self {
        Self {
            profiles: vec![Profile::zeros(grid.nx()); grid.nt() + 1],
            grid,
        }
    }

    /// Samples `f(t, x)` at every lattice point.
    pub fn from_fn(grid: SpaceTimeGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let profiles = (0..=grid.nt())
            .map(|n| {
                let t = grid.t(n);
                grid.profile_from_fn(|x| f(t, x))
            })
            .collect();
        Self { grid, profiles }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn profiles(&self) -> &[Profile] {
        &self.profiles
    }

    pub fn profile(&self, n: usize) -> &Profile {
        &self.profiles[n]
    }

    pub fn initial(&self) -> &Profile {
        &self.profiles[0]
    }

    pub fn terminal(&self) -> &Profile {
        &self.profiles[self.profiles.len() - 1]
    }

    /// Pointwise `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Field, b: f64) -> Result<Field> {
        self.grid.ensure_same(&other.grid)?;
        let profiles = self
            .profiles
            .iter()
            .zip(&other.profiles)
            .map(|(p, q)| {
                Profile::new(
                    p.values()
                        .iter()
                        .zip(q.values())
                        .map(|(u, v)| a * u + b * v)
                        .collect(),
                )
            })
            .collect();
        Ok(Field {
            grid: self.grid,
            profiles,
        })
    }

    /// `H`-norm of every time level.
    pub fn h_norms(&self) -> Vec<f64> {
        self.profiles.iter().map(|p| p.h_norm(&self.grid)).collect()
    }
}

fn weighted_lp(values: &[f64], p: f64, dx: f64) -> f64 {
    if p == 2.0 {
        (dx * values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    } else if p == 1.0 {
        dx * values.iter().map(|v| v.abs()).sum::<f64>()
    } else {
        (dx * values.iter().map(|v| v.abs().powf(p)).sum::<f64>()).powf(1.0 / p)
    }
}

/// `(int_0^1 |u|^p dx)^(1/p)` by the midpoint rule on interior nodes, or the
/// maximum nodal magnitude for [`NormKind::Sup`].
pub fn lp_norm(kind: NormKind, profile: &Profile, grid: &SpaceTimeGrid) -> Result<f64> {
    if profile.len() != grid.nx() {
        return Err(invalid(format!(
            "profile has {} nodes, grid has {}",
            profile.len(),
            grid.nx()
        )));
    }
    Ok(match kind.validate()? {
        NormKind::Sup => profile.values().iter().fold(0.0, |m, v| m.max(v.abs())),
        NormKind::Lp(p) => weighted_lp(profile.values(), p, grid.dx()),
    })
}

/// `sup_t ||u(t)||` over the time levels of a field.
pub fn sup_time_norm(kind: NormKind, field: &Field) -> Result<f64> {
    let kind = kind.validate()?;
    field
        .profiles()
        .iter()
        .try_fold(0.0_f64, |m, p| Ok(m.max(lp_norm(kind, p, field.grid())?)))
}
