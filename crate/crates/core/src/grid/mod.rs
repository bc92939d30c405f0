//! Uniform tensor grids on boxes with homogeneous Dirichlet boundary.
//!
//! Nodes are the interior points `lower + (i + 1) * h` of each axis; the
//! boundary itself carries no unknowns. Values are stored with the first
//! axis fastest, so in 2D node `(i, j)` lives at `i + n0 * j`.

mod elliptic;
mod ops;
mod quadrature;

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};

pub use elliptic::{conjugate_gradient, helmholtz_solve, BoundaryTrace, Helmholtz, SolveMethod};
pub use ops::{apply_laplacian, divergence, dot_field, gradient, laplacian_into};
pub use quadrature::{integrate, integrate_space, integrate_spacetime, trapezoid_weights};

/// A point of R^N stored in two slots; the second slot is 0 in 1D.
pub type Point = [f64; 2];

/// Field values: real or complex scalars with the Hermitian inner product.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + Debug
    + PartialEq
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign<f64>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    const ZERO: Self;
    fn from_real(x: f64) -> Self;
    fn abs_sqr(self) -> f64;
    fn conj(self) -> Self;
    fn real(self) -> f64;
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    #[inline]
    fn from_real(x: f64) -> Self {
        x
    }
    #[inline]
    fn abs_sqr(self) -> f64 {
        self * self
    }
    #[inline]
    fn conj(self) -> Self {
        self
    }
    #[inline]
    fn real(self) -> f64 {
        self
    }
}

impl Scalar for Complex64 {
    const ZERO: Self = Complex64::new(0.0, 0.0);
    #[inline]
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    #[inline]
    fn abs_sqr(self) -> f64 {
        self.norm_sqr()
    }
    #[inline]
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    #[inline]
    fn real(self) -> f64 {
        self.re
    }
}

/// Uniform grid of interior nodes on a box in R^1 or R^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    dim: usize,
    lower: [f64; 2],
    upper: [f64; 2],
    n: [usize; 2],
}

impl SpatialGrid {
    pub fn new_1d(lower: f64, upper: f64, n: usize) -> Result<Self> {
        Self::new(1, [lower, 0.0], [upper, 0.0], [n, 1])
    }

    pub fn new_2d(lower: [f64; 2], upper: [f64; 2], n: [usize; 2]) -> Result<Self> {
        Self::new(2, lower, upper, n)
    }

    pub fn new(dim: usize, lower: [f64; 2], upper: [f64; 2], n: [usize; 2]) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(invalid(format!("grid dimension must be 1 or 2, got {dim}")));
        }
        for a in 0..dim {
            if n[a] < 3 {
                return Err(invalid(format!("axis {a} needs at least 3 interior nodes")));
            }
            if !(upper[a] > lower[a]) || !lower[a].is_finite() || !upper[a].is_finite() {
                return Err(invalid(format!("axis {a} has an empty interval")));
            }
        }
        let mut n = n;
        let mut lower = lower;
        let mut upper = upper;
        if dim == 1 {
            n[1] = 1;
            lower[1] = 0.0;
            upper[1] = 0.0;
        }
        Ok(Self { dim, lower, upper, n })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn n(&self, axis: usize) -> usize {
        self.n[axis]
    }

    #[inline]
    pub fn lower(&self, axis: usize) -> f64 {
        self.lower[axis]
    }

    #[inline]
    pub fn upper(&self, axis: usize) -> f64 {
        self.upper[axis]
    }

    #[inline]
    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (self.n[axis] + 1) as f64
    }

    pub fn max_spacing(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).fold(0.0, f64::max)
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).fold(f64::INFINITY, f64::min)
    }

    /// Number of interior nodes.
    #[inline]
    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Volume of one grid cell, the weight of the midpoint rule.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.n[0] * j
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.n[0], idx / self.n[0])
    }

    /// Coordinate of logical node `k` on `axis`; `k = -1` and `k = n` are the
    /// boundary points, anything further out is a ghost.
    #[inline]
    pub fn coordinate(&self, axis: usize, k: isize) -> f64 {
        self.lower[axis] + (k + 1) as f64 * self.spacing(axis)
    }

    pub fn point(&self, idx: usize) -> Point {
        let (i, j) = self.coords(idx);
        if self.dim == 1 {
            [self.coordinate(0, i as isize), 0.0]
        } else {
            [self.coordinate(0, i as isize), self.coordinate(1, j as isize)]
        }
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(move |idx| self.point(idx))
    }

    /// Whether `p` lies in the open box.
    pub fn contains(&self, p: Point) -> bool {
        (0..self.dim).all(|a| p[a] > self.lower[a] && p[a] < self.upper[a])
    }

    /// Nested refinement: every cell is split into `factor` cells per axis.
    pub fn refine(&self, factor: usize) -> Self {
        let mut n = self.n;
        for a in 0..self.dim {
            n[a] = (self.n[a] + 1) * factor - 1;
        }
        Self { n, ..*self }
    }

    /// Indices of the grid neighbours of `idx` (4-neighbourhood in 2D).
    pub fn neighbours(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let (i, j) = self.coords(idx);
        let nx = self.n[0];
        let ny = self.n[1];
        let mut out = [usize::MAX; 4];
        if i > 0 {
            out[0] = self.index(i - 1, j);
        }
        if i + 1 < nx {
            out[1] = self.index(i + 1, j);
        }
        if self.dim == 2 {
            if j > 0 {
                out[2] = self.index(i, j - 1);
            }
            if j + 1 < ny {
                out[3] = self.index(i, j + 1);
            }
        }
        out.into_iter().filter(|&k| k != usize::MAX)
    }

    pub(crate) fn check_same(&self, other: &SpatialGrid) -> Result<()> {
        if self != other {
            return Err(LabError::ShapeMismatch("fields live on different spatial grids".into()));
        }
        Ok(())
    }
}

/// Uniform time grid `t_m = m * dt`, `m = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(invalid("time horizon must be positive"));
        }
        if steps < 2 {
            return Err(invalid("time grid needs at least 2 steps"));
        }
        Ok(Self { horizon, steps })
    }

    #[inline]
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of time nodes, `steps + 1`.
    #[inline]
    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    #[inline]
    pub fn t(&self, m: usize) -> f64 {
        if m == self.steps {
            self.horizon
        } else {
            m as f64 * self.dt()
        }
    }

    pub fn refine(&self, factor: usize) -> Self {
        Self { horizon: self.horizon, steps: self.steps * factor }
    }

    pub(crate) fn check_same(&self, other: &TimeGrid) -> Result<()> {
        if self != other {
            return Err(LabError::ShapeMismatch("fields live on different time grids".into()));
        }
        Ok(())
    }
}

/// One scalar per interior node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<T> {
    grid: SpatialGrid,
    values: Vec<T>,
}

impl<T: Scalar> ScalarField<T> {
    pub fn zeros(grid: SpatialGrid) -> Self {
        Self { grid, values: vec![T::ZERO; grid.len()] }
    }

    pub fn from_values(grid: SpatialGrid, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(LabError::ShapeMismatch(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: SpatialGrid, f: impl Fn(Point) -> T) -> Self {
        Self { grid, values: grid.points().map(f).collect() }
    }

    #[inline]
    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> ScalarField<U> {
        ScalarField { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Hermitian inner product `h^N * sum f_i conj(g_i)`.
    pub fn inner(&self, other: &Self) -> T {
        dot_field(&self.grid, &self.values, &other.values)
    }

    /// Squared discrete L2 norm.
    pub fn norm_sqr(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().map(|v| v.abs_sqr()).sum::<f64>()
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs_sqr().sqrt()).fold(0.0, f64::max)
    }
}

/// Values on the tensor space-time grid, one slice per time node.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField<T> {
    grid: SpatialGrid,
    time: TimeGrid,
    values: Vec<T>,
}

impl<T: Scalar> SpaceTimeField<T> {
    pub fn zeros(grid: SpatialGrid, time: TimeGrid) -> Self {
        Self { grid, time, values: vec![T::ZERO; grid.len() * time.nodes()] }
    }

    pub fn from_fn(grid: SpatialGrid, time: TimeGrid, f: impl Fn(Point, f64) -> T) -> Self {
        let mut values = Vec::with_capacity(grid.len() * time.nodes());
        for m in 0..time.nodes() {
            let t = time.t(m);
            values.extend(grid.points().map(|p| f(p, t)));
        }
        Self { grid, time, values }
    }

    pub fn from_slices(grid: SpatialGrid, time: TimeGrid, slices: Vec<Vec<T>>) -> Result<Self> {
        if slices.len() != time.nodes() {
            return Err(LabError::ShapeMismatch(format!(
                "expected {} time slices, got {}",
                time.nodes(),
                slices.len()
            )));
        }
        let mut values = Vec::with_capacity(grid.len() * time.nodes());
        for s in slices {
            if s.len() != grid.len() {
                return Err(LabError::ShapeMismatch("time slice length differs from grid".into()));
            }
            values.extend(s);
        }
        Ok(Self { grid, time, values })
    }

    #[inline]
    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    #[inline]
    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    #[inline]
    pub fn slice(&self, m: usize) -> &[T] {
        let n = self.grid.len();
        &self.values[m * n..(m + 1) * n]
    }

    #[inline]
    pub fn slice_mut(&mut self, m: usize) -> &mut [T] {
        let n = self.grid.len();
        &mut self.values[m * n..(m + 1) * n]
    }

    pub fn slice_field(&self, m: usize) -> ScalarField<T> {
        ScalarField { grid: self.grid, values: self.slice(m).to_vec() }
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> SpaceTimeField<U> {
        SpaceTimeField {
            grid: self.grid,
            time: self.time,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination of two fields on the same grids.
    pub fn zip_with<U: Scalar, V: Scalar>(
        &self,
        other: &SpaceTimeField<U>,
        f: impl Fn(T, U) -> V,
    ) -> Result<SpaceTimeField<V>> {
        self.grid.check_same(&other.grid)?;
        self.time.check_same(&other.time)?;
        Ok(SpaceTimeField {
            grid: self.grid,
            time: self.time,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs_sqr().sqrt()).fold(0.0, f64::max)
    }
}

impl SpaceTimeField<f64> {
    /// Promote a real field to complex values.
    pub fn to_complex(&self) -> SpaceTimeField<Complex64> {
        self.map(Complex64::from_real)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_matches_interior_count() {
        let g = SpatialGrid::new_1d(0.0, 1.0, 9).unwrap();
        assert!((g.spacing(0) - 0.1).abs() < 1e-15);
        assert!((g.point(0)[0] - 0.1).abs() < 1e-15);
        assert!((g.point(8)[0] - 0.9).abs() < 1e-15);
        let g2 = SpatialGrid::new_2d([0.0, -1.0], [2.0, 1.0], [3, 4]).unwrap();
        assert_eq!(g2.len(), 12);
        assert!((g2.spacing(1) - 0.4).abs() < 1e-15);
        assert_eq!(g2.coords(g2.index(2, 3)), (2, 3));
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(SpatialGrid::new_1d(0.0, 1.0, 2).is_err());
        assert!(SpatialGrid::new_1d(1.0, 1.0, 5).is_err());
        assert!(SpatialGrid::new(3, [0.0; 2], [1.0; 2], [4, 4]).is_err());
        assert!(TimeGrid::new(1.0, 1).is_err());
        assert!(TimeGrid::new(-1.0, 10).is_err());
    }

    #[test]
    fn time_nodes_cover_horizon() {
        let tg = TimeGrid::new(0.7, 7).unwrap();
        assert_eq!(tg.nodes(), 8);
        assert_eq!(tg.t(0), 0.0);
        assert_eq!(tg.t(7), 0.7);
    }

    #[test]
    fn refinement_is_nested() {
        let g = SpatialGrid::new_1d(0.0, 1.0, 4).unwrap();
        let f = g.refine(2);
        assert_eq!(f.n(0), 9);
        assert!((f.point(1)[0] - g.point(0)[0]).abs() < 1e-15);
    }

    #[test]
    fn space_time_slices_have_grid_length() {
        let g = SpatialGrid::new_1d(0.0, 1.0, 5).unwrap();
        let tg = TimeGrid::new(1.0, 4).unwrap();
        let f = SpaceTimeField::from_fn(g, tg, |p, t| p[0] + t);
        assert_eq!(f.slice(3).len(), 5);
        assert!((f.slice(4)[0] - (1.0 / 6.0 + 1.0)).abs() < 1e-14);
        assert!(SpaceTimeField::<f64>::from_slices(g, tg, vec![vec![0.0; 5]; 4]).is_err());
    }
}
