//! Brownian-sheet increments on the lattice and deterministic controls.
//!
//! Cell `(n, i)` covers `[t_n, t_{n+1}] x [x_i - dx/2, x_i + dx/2]` and carries
//! an increment `~ N(0, dt dx)`. Draws are addressed by
//! `(seed, replica, n, i)` through a ChaCha8 stream (`seed` keys the cipher,
//! `replica` selects the stream, the cell index fixes the word position), so
//! any replica can be regenerated in isolation and in any order.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{invalid, Result};
use crate::lattice::SpaceTimeGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub replica: u64,
}

impl StreamKey {
    pub fn new(seed: u64, replica: u64) -> Self {
        Self { seed, replica }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseLattice {
    grid: SpaceTimeGrid,
    key: Option<StreamKey>,
    /// Row-major by time step: `increments[n * nx + i]`.
    increments: Vec<f64>,
}

impl NoiseLattice {
    /// All-zero increments: turns every stochastic solver deterministic.
    pub fn zeros(grid: SpaceTimeGrid) -> Self {
        Self {
            grid,
            key: None,
            increments: vec![0.0; grid.nt() * grid.nx()],
        }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn key(&self) -> Option<StreamKey> {
        self.key
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Increments of time step `n` (from `t_n` to `t_{n+1}`).
    #[inline]
    pub fn row(&self, n: usize) -> &[f64] {
        let nx = self.grid.nx();
        &self.increments[n * nx..(n + 1) * nx]
    }
}

// Two u64 per Box-Muller pair, two u32 words per u64.
const WORDS_PER_PAIR: u128 = 4;

#[inline]
fn open_unit(bits: u64) -> f64 {
    // (0, 1]: never zero, so ln is finite.
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normals for one lattice row, deterministic in `(key, n)`.
fn fill_row(rng: &mut ChaCha8Rng, n: usize, out: &mut [f64], scale: f64) {
    let pairs = out.len().div_ceil(2) as u128;
    rng.set_word_pos(n as u128 * pairs * WORDS_PER_PAIR);
    for chunk in out.chunks_mut(2) {
        let u1 = open_unit(rng.next_u64());
        let u2 = open_unit(rng.next_u64());
        let radius = (-2.0 * u1.ln()).sqrt() * scale;
        let (s, c) = (TAU * u2).sin_cos();
        chunk[0] = radius * c;
        if let Some(second) = chunk.get_mut(1) {
            *second = radius * s;
        }
    }
}

pub fn sample_sheet(grid: &SpaceTimeGrid, key: StreamKey) -> NoiseLattice {
    let nx = grid.nx();
    let mut rng = ChaCha8Rng::seed_from_u64(key.seed);
    rng.set_stream(key.replica);
    let scale = (grid.dt() * grid.dx()).sqrt();
    let mut increments = vec![0.0; grid.nt() * nx];
    for (n, row) in increments.chunks_mut(nx).enumerate() {
        fill_row(&mut rng, n, row, scale);
    }
    NoiseLattice {
        grid: *grid,
        key: Some(key),
        increments,
    }
}

/// Lattice form of `W + lambda int int h`: every increment gains
/// `lambda h(s, y) dt dx`.
pub fn shift_noise(noise: &NoiseLattice, h: &Control, lambda: f64) -> Result<NoiseLattice> {
    noise.grid.ensure_same(&h.grid)?;
    if !(lambda >= 0.0) {
        return Err(invalid(format!("shift scale must be nonnegative, got {lambda}")));
    }
    let cell = lambda * noise.grid.dt() * noise.grid.dx();
    Ok(NoiseLattice {
        grid: noise.grid,
        key: noise.key,
        increments: noise
            .increments
            .iter()
            .zip(&h.values)
            .map(|(w, h)| w + cell * h)
            .collect(),
    })
}

/// Deterministic control `h in L^2([0,T] x [0,1])`, piecewise constant on
/// lattice cells, optionally tagged with the radius of the ball `T_M` it is
/// required to lie in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Control {
    grid: SpaceTimeGrid,
    values: Vec<f64>,
    bound_m: Option<f64>,
}

impl Control {
    pub fn new(grid: SpaceTimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.nt() * grid.nx() {
            return Err(invalid(format!(
                "control needs {} cell values, got {}",
                grid.nt() * grid.nx(),
                values.len()
            )));
        }
        Ok(Self {
            grid,
            values,
            bound_m: None,
        })
    }

    pub fn zeros(grid: SpaceTimeGrid) -> Self {
        Self {
            values: vec![0.0; grid.nt() * grid.nx()],
            grid,
            bound_m: None,
        }
    }

    /// Samples `h(s, y)` at cell centers `(t_n + dt/2, x_i)`.
    pub fn from_fn(grid: SpaceTimeGrid, h: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.nt() * grid.nx());
        for n in 0..grid.nt() {
            let s = grid.t(n) + 0.5 * grid.dt();
            values.extend(grid.nodes().map(|y| h(s, y)));
        }
        Self {
            grid,
            values,
            bound_m: None,
        }
    }

    /// Attaches the constraint `int int h^2 <= m`.
    pub fn with_bound(mut self, m: f64) -> Result<Self> {
        if !(m > 0.0) {
            return Err(invalid(format!("control bound M must be positive, got {m}")));
        }
        self.bound_m = Some(m);
        Ok(self)
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bound_m(&self) -> Option<f64> {
        self.bound_m
    }

    #[inline]
    pub fn row(&self, n: usize) -> &[f64] {
        let nx = self.grid.nx();
        &self.values[n * nx..(n + 1) * nx]
    }

    /// `L^2([0,T] x [0,1])` inner product with cell weights `dt dx`.
    pub fn inner(&self, other: &Control) -> f64 {
        self.grid.dt()
            * self.grid.dx()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    /// `int int h^2`.
    pub fn norm_squared(&self) -> f64 {
        self.inner(self)
    }

    pub fn energy(&self) -> f64 {
        0.5 * self.norm_squared()
    }

    /// Membership in `T_M` up to rounding; vacuously true without a bound.
    pub fn in_ball(&self) -> bool {
        self.bound_m
            .is_none_or(|m| self.norm_squared() <= m * (1.0 + 1e-12))
    }

    pub fn scaled(&self, c: f64) -> Control {
        Control {
            grid: self.grid,
            values: self.values.iter().map(|v| c * v).collect(),
            bound_m: None,
        }
    }

    /// `a * self + b * other`
    pub fn combine(&self, a: f64, other: &Control, b: f64) -> Result<Control> {
        self.grid.ensure_same(&other.grid)?;
        Ok(Control {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            bound_m: None,
        })
    }
}

/// `1/2 int_0^T int_0^1 h^2 dy ds`.
pub fn control_objective(h: &Control) -> f64 {
    h.energy()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> SpaceTimeGrid {
        SpaceTimeGrid::new(15, 32, 0.5).unwrap()
    }

    #[test]
    fn same_key_same_lattice() {
        let g = grid();
        let a = sample_sheet(&g, StreamKey::new(7, 3));
        let b = sample_sheet(&g, StreamKey::new(7, 3));
        assert_eq!(a, b);
        let c = sample_sheet(&g, StreamKey::new(7, 4));
        assert_ne!(a.increments(), c.increments());
    }

    #[test]
    fn shift_identities() {
        let g = grid();
        let w = sample_sheet(&g, StreamKey::new(1, 0));
        let h0 = Control::zeros(g);
        assert_eq!(shift_noise(&w, &h0, 3.0).unwrap(), w);
        let h = Control::from_fn(g, |s, y| s + y);
        assert_eq!(shift_noise(&w, &h, 0.0).unwrap(), w);

        let c = 1.7;
        let lambda = 2.5;
        let hc = Control::from_fn(g, |_, _| c);
        let shifted = shift_noise(&w, &hc, lambda).unwrap();
        let cell = lambda * c * g.dt() * g.dx();
        for (a, b) in shifted.increments().iter().zip(w.increments()) {
            assert_eq!(*a, b + cell);
        }
    }

    #[test]
    fn shift_rejects_grid_mismatch() {
        let w = sample_sheet(&grid(), StreamKey::new(1, 0));
        let other = SpaceTimeGrid::new(15, 16, 0.5).unwrap();
        assert!(shift_noise(&w, &Control::zeros(other), 1.0).is_err());
    }

    #[test]
    fn objective_values() {
        let g = SpaceTimeGrid::new(9, 10, 1.0).unwrap();
        assert_eq!(control_objective(&Control::zeros(g)), 0.0);
        let one = Control::from_fn(g, |_, _| 1.0);
        // Midpoint weights cover nx*dx = 0.9 of the unit interval.
        assert!((control_objective(&one) - 0.5 * 0.9).abs() < 1e-12);

        // With interior cells covering [dx/2, 1-dx/2] the unit constant has
        // norm nx/(nx+1); rescale to land exactly on the ball boundary.
        let unit = one.scaled((10.0_f64 / 9.0).sqrt()).with_bound(1.0).unwrap();
        assert!((unit.norm_squared() - 1.0).abs() < 1e-12);
        assert!((control_objective(&unit) - 0.5).abs() < 1e-12);
        assert!(unit.in_ball());
        assert!(!unit.scaled(1.01).with_bound(1.0).unwrap().in_ball());
    }
}
