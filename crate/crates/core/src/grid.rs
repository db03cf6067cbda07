//! Uniform cell-centered grids on the unit box with Neumann-consistent
//! discrete calculus.
//!
//! Nodes are stored with the x index fastest: node `(ix, iy)` lives at
//! `iy * n + ix`. All reductions run in that index order.

use crate::error::{Error, Result};
use std::f64::consts::PI;

/// A uniform cell-centered grid on `[0, 1]^dims`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Grid {
    dims: usize,
    n: usize,
}

impl Grid {
    pub fn new(dims: usize, n: usize) -> Result<Grid> {
        if !(1..=2).contains(&dims) {
            return Err(Error::InvalidGrid(format!("dimension {dims} not in {{1, 2}}")));
        }
        if n < 2 {
            return Err(Error::InvalidGrid(format!("{n} nodes per axis, need at least 2")));
        }
        Ok(Grid { dims, n })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Nodes per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Total node count `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dims as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dims as i32)
    }

    /// Cell-center coordinate `(i + 1/2) h` along one axis.
    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h()
    }

    /// Per-axis indices of a linear node index.
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        if self.dims == 1 {
            [idx, 0]
        } else {
            [idx % self.n, idx / self.n]
        }
    }

    /// Coordinates of node `idx` (the second entry is unused in 1D).
    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let [i, j] = self.multi_index(idx);
        if self.dims == 1 {
            [self.center(i), 0.0]
        } else {
            [self.center(i), self.center(j)]
        }
    }

    /// Samples `f` at every node. `f` receives `dims` coordinates.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Result<Field> {
        let values = (0..self.len())
            .map(|idx| {
                let c = self.coords(idx);
                f(&c[..self.dims])
            })
            .collect();
        Field::new(*self, values)
    }

    /// The DCT-II mode `prod_a cos(k_a pi x_a)` sampled at cell centers.
    /// Missing trailing entries of `mode` are taken as zero.
    pub fn cosine_mode(&self, mode: &[usize]) -> Field {
        let k = |a: usize| mode.get(a).copied().unwrap_or(0) as f64;
        let values = (0..self.len())
            .map(|idx| {
                let c = self.coords(idx);
                (0..self.dims).map(|a| (k(a) * PI * c[a]).cos()).product()
            })
            .collect();
        Field::from_vec(*self, values)
    }

    /// `||q_k||_H^2` of [`Grid::cosine_mode`]: a factor 1/2 per nonzero index.
    pub fn cosine_mode_norm_sq(&self, mode: &[usize]) -> f64 {
        (0..self.dims).map(|a| if mode.get(a).copied().unwrap_or(0) == 0 { 1.0 } else { 0.5 }).product()
    }

    fn check_mode(&self, mode: &[usize]) -> Result<()> {
        if mode.len() > self.dims || mode.iter().any(|&k| k >= self.n) {
            return Err(Error::InvalidParameter(format!(
                "mode {mode:?} out of range for {}D grid with n = {}",
                self.dims, self.n
            )));
        }
        Ok(())
    }

    /// Validated variant of [`Grid::cosine_mode`].
    pub fn try_cosine_mode(&self, mode: &[usize]) -> Result<Field> {
        self.check_mode(mode)?;
        Ok(self.cosine_mode(mode))
    }
}

/// Real values on the nodes of a [`Grid`]; every value is finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Field> {
        if values.len() != grid.len() {
            return Err(Error::InvalidField(format!("{} values for a grid with {} nodes", values.len(), grid.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite value at node {i}")));
        }
        Ok(Field { grid, values })
    }

    /// Internal constructor for values produced by finite arithmetic on
    /// finite fields.
    pub(crate) fn from_vec(grid: Grid, values: Vec<f64>) -> Field {
        debug_assert_eq!(values.len(), grid.len());
        debug_assert!(values.iter().all(|v| v.is_finite()), "non-finite field value");
        Field { grid, values }
    }

    pub fn constant(grid: Grid, c: f64) -> Field {
        assert!(c.is_finite());
        Field { grid, values: vec![c; grid.len()] }
    }

    pub fn zeros(grid: Grid) -> Field {
        Field::constant(grid, 0.0)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn same_grid(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// Spatial mean `h^d sum_i f_i` (the unit box has measure one).
    pub fn mean(&self) -> f64 {
        self.grid.cell_volume() * sum(&self.values)
    }

    pub fn project_zero_mean(&self) -> ZeroMeanField {
        let m = self.mean();
        ZeroMeanField(Field::from_vec(self.grid, self.values.iter().map(|v| v - m).collect()))
    }

    /// Second-order Neumann Laplacian with ghost values by reflection.
    pub fn laplace_neumann(&self) -> Field {
        let mut out = vec![0.0; self.len()];
        laplace_into(self.grid, &self.values, &mut out);
        Field::from_vec(self.grid, out)
    }

    /// `1/2 sum_faces h^(d-2) (f_right - f_left)^2` over interior faces.
    pub fn dirichlet_energy(&self) -> f64 {
        dirichlet_energy_raw(self.grid, &self.values)
    }

    /// `(f, g)_H = h^d sum_i f_i g_i`.
    pub fn inner_h(&self, other: &Field) -> Result<f64> {
        self.same_grid(other)?;
        Ok(self.grid.cell_volume() * dot(&self.values, &other.values))
    }

    pub fn norm_h(&self) -> f64 {
        (self.grid.cell_volume() * dot(&self.values, &self.values)).sqrt()
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.same_grid(other)?;
        Field::new(self.grid, self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect())
    }

    /// `self + a * other`.
    pub fn plus_scaled(&self, a: f64, other: &Field) -> Result<Field> {
        self.same_grid(other)?;
        Field::new(self.grid, self.values.iter().zip(&other.values).map(|(x, y)| x + a * y).collect())
    }

    pub fn scaled(&self, a: f64) -> Result<Field> {
        Field::new(self.grid, self.values.iter().map(|v| a * v).collect())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Field> {
        Field::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }
}

/// A [`Field`] whose spatial mean vanishes to `1e-12 (max|f| + 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ZeroMeanField(Field);

impl ZeroMeanField {
    pub const TOLERANCE: f64 = 1e-12;

    pub fn zeros(grid: Grid) -> ZeroMeanField {
        ZeroMeanField(Field::zeros(grid))
    }

    pub fn as_field(&self) -> &Field {
        &self.0
    }

    pub fn into_field(self) -> Field {
        self.0
    }

    pub fn grid(&self) -> Grid {
        self.0.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    /// Re-projects after arithmetic that preserves the mean only up to
    /// round-off.
    pub(crate) fn from_vec_projected(grid: Grid, mut values: Vec<f64>) -> ZeroMeanField {
        let m = grid.cell_volume() * sum(&values);
        values.iter_mut().for_each(|v| *v -= m);
        ZeroMeanField(Field::from_vec(grid, values))
    }
}

impl TryFrom<Field> for ZeroMeanField {
    type Error = Error;

    fn try_from(f: Field) -> Result<ZeroMeanField> {
        let mean = f.mean();
        let tolerance = ZeroMeanField::TOLERANCE * (f.max_abs() + 1.0);
        if mean.abs() > tolerance {
            return Err(Error::NonZeroMean { mean, tolerance });
        }
        Ok(ZeroMeanField(f))
    }
}

impl std::ops::Deref for ZeroMeanField {
    type Target = Field;

    fn deref(&self) -> &Field {
        &self.0
    }
}

pub fn make_grid(d: usize, n: usize) -> Result<Grid> {
    Grid::new(d, n)
}

pub(crate) fn sum(v: &[f64]) -> f64 {
    v.iter().sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out = Delta_h f` on raw node data.
pub(crate) fn laplace_into(grid: Grid, f: &[f64], out: &mut [f64]) {
    let n = grid.n;
    let inv_h2 = (n * n) as f64;
    let second = |prev: f64, cur: f64, next: f64| (prev - 2.0 * cur + next) * inv_h2;
    match grid.dims {
        1 => {
            for i in 0..n {
                let prev = f[i.saturating_sub(1)];
                let next = f[(i + 1).min(n - 1)];
                out[i] = second(prev, f[i], next);
            }
        }
        _ => {
            for j in 0..n {
                for i in 0..n {
                    let idx = j * n + i;
                    let c = f[idx];
                    let xm = f[j * n + i.saturating_sub(1)];
                    let xp = f[j * n + (i + 1).min(n - 1)];
                    let ym = f[j.saturating_sub(1) * n + i];
                    let yp = f[(j + 1).min(n - 1) * n + i];
                    out[idx] = second(xm, c, xp) + second(ym, c, yp);
                }
            }
        }
    }
}

pub(crate) fn dirichlet_energy_raw(grid: Grid, f: &[f64]) -> f64 {
    let n = grid.n;
    let weight = grid.h().powi(grid.dims as i32 - 2);
    let mut acc = 0.0;
    match grid.dims {
        1 => {
            for i in 0..n - 1 {
                let d = f[i + 1] - f[i];
                acc += d * d;
            }
        }
        _ => {
            for j in 0..n {
                for i in 0..n - 1 {
                    let d = f[j * n + i + 1] - f[j * n + i];
                    acc += d * d;
                }
            }
            for j in 0..n - 1 {
                for i in 0..n {
                    let d = f[(j + 1) * n + i] - f[j * n + i];
                    acc += d * d;
                }
            }
        }
    }
    0.5 * weight * acc
}
