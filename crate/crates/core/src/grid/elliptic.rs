//! Solvers for `(σ I − Δ_h) u = f` with Dirichlet data.
//!
//! The direct path is exact up to rounding: a Thomas sweep in 1D and a
//! fast diagonalization by the orthonormal discrete sine basis in 2D. The
//! Jacobi-preconditioned conjugate gradient path is kept for cross-checks.

use serde::{Deserialize, Serialize};

use super::{laplacian_into, Point, Scalar, ScalarField, SpatialGrid};
use crate::error::{invalid, LabError, Result};

/// How elliptic systems are solved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SolveMethod {
    #[default]
    Direct,
    ConjugateGradient { tol: f64, max_iter: usize },
}

#[derive(Debug, Clone)]
enum Factor {
    Thomas { cp: Vec<f64>, inv_denom: Vec<f64>, off: f64 },
    Diagonal { sx: Vec<f64>, sy: Vec<f64>, lx: Vec<f64>, ly: Vec<f64> },
}

/// Factorized `σ I − Δ_h` on a fixed grid, `σ ≥ 0`.
#[derive(Debug, Clone)]
pub struct Helmholtz {
    grid: SpatialGrid,
    shift: f64,
    factor: Factor,
}

/// Orthonormal sine matrix `S_jk = √(2/(n+1)) sin((j+1)(k+1)π/(n+1))`; `S = Sᵀ = S⁻¹`.
fn sine_matrix(n: usize) -> Vec<f64> {
    let c = (2.0 / (n + 1) as f64).sqrt();
    let mut s = vec![0.0; n * n];
    for j in 0..n {
        for k in 0..n {
            let arg = ((j + 1) * (k + 1)) as f64 * std::f64::consts::PI / (n + 1) as f64;
            s[j * n + k] = c * arg.sin();
        }
    }
    s
}

/// Eigenvalues of `−Δ_h` along one axis.
fn sine_eigenvalues(n: usize, h: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let s = ((k + 1) as f64 * std::f64::consts::PI / (2 * (n + 1)) as f64).sin();
            4.0 / (h * h) * s * s
        })
        .collect()
}

impl Helmholtz {
    pub fn new(grid: SpatialGrid, shift: f64) -> Result<Self> {
        if !(shift >= 0.0) || !shift.is_finite() {
            return Err(invalid(format!("Helmholtz shift must be finite and ≥ 0, got {shift}")));
        }
        let factor = if grid.dim() == 1 {
            let n = grid.n(0);
            let h2 = grid.spacing(0).powi(2);
            let d = shift + 2.0 / h2;
            let off = -1.0 / h2;
            let mut cp = vec![0.0; n];
            let mut inv_denom = vec![0.0; n];
            inv_denom[0] = 1.0 / d;
            cp[0] = off / d;
            for i in 1..n {
                let den = d - off * cp[i - 1];
                inv_denom[i] = 1.0 / den;
                cp[i] = off / den;
            }
            Factor::Thomas { cp, inv_denom, off }
        } else {
            Factor::Diagonal {
                sx: sine_matrix(grid.n(0)),
                sy: sine_matrix(grid.n(1)),
                lx: sine_eigenvalues(grid.n(0), grid.spacing(0)),
                ly: sine_eigenvalues(grid.n(1), grid.spacing(1)),
            }
        };
        Ok(Self { grid, shift, factor })
    }

    #[inline]
    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    #[inline]
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// `out = (σ I − Δ_h) u`.
    pub fn apply<T: Scalar>(&self, u: &[T], out: &mut [T]) {
        laplacian_into(&self.grid, u, out);
        for (o, &v) in out.iter_mut().zip(u) {
            *o = v * self.shift - *o;
        }
    }

    /// Overwrite `rhs` with the solution of `(σ I − Δ_h) u = rhs`.
    pub fn solve_in_place<T: Scalar>(&self, rhs: &mut [T]) {
        debug_assert_eq!(rhs.len(), self.grid.len());
        match &self.factor {
            Factor::Thomas { cp, inv_denom, off } => {
                let n = rhs.len();
                rhs[0] = rhs[0] * inv_denom[0];
                for i in 1..n {
                    let prev = rhs[i - 1];
                    rhs[i] = (rhs[i] - prev * *off) * inv_denom[i];
                }
                for i in (0..n - 1).rev() {
                    let next = rhs[i + 1];
                    rhs[i] -= next * cp[i];
                }
            }
            Factor::Diagonal { sx, sy, lx, ly } => {
                let nx = self.grid.n(0);
                let ny = self.grid.n(1);
                let mut tmp = vec![T::ZERO; nx * ny];
                transform(sx, sy, nx, ny, rhs, &mut tmp);
                for l in 0..ny {
                    for k in 0..nx {
                        tmp[k + nx * l] = tmp[k + nx * l] / (self.shift + lx[k] + ly[l]);
                    }
                }
                transform(sx, sy, nx, ny, &tmp, rhs);
            }
        }
    }

    pub fn solve<T: Scalar>(&self, rhs: &[T]) -> Vec<T> {
        let mut out = rhs.to_vec();
        self.solve_in_place(&mut out);
        out
    }
}

/// `out = S_x · F · S_y` for `F` stored with the first axis fastest.
fn transform<T: Scalar>(sx: &[f64], sy: &[f64], nx: usize, ny: usize, f: &[T], out: &mut [T]) {
    let mut g = vec![T::ZERO; nx * ny];
    for j in 0..ny {
        let col = &f[nx * j..nx * (j + 1)];
        for k in 0..nx {
            let row = &sx[k * nx..(k + 1) * nx];
            let mut acc = T::ZERO;
            for (i, &c) in col.iter().enumerate() {
                acc += c * row[i];
            }
            g[k + nx * j] = acc;
        }
    }
    for v in out.iter_mut() {
        *v = T::ZERO;
    }
    for j in 0..ny {
        for l in 0..ny {
            let c = sy[j * ny + l];
            for k in 0..nx {
                let gv = g[k + nx * j];
                out[k + nx * l] += gv * c;
            }
        }
    }
}

/// Jacobi-preconditioned conjugate gradient for `(σ I − Δ_h) u = b`.
pub fn conjugate_gradient<T: Scalar>(
    grid: &SpatialGrid,
    shift: f64,
    b: &[T],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<T>> {
    let n = grid.len();
    let mut diag = shift;
    for a in 0..grid.dim() {
        diag += 2.0 / grid.spacing(a).powi(2);
    }
    let inv_diag = 1.0 / diag;
    let hdot = |a: &[T], c: &[T]| -> f64 {
        a.iter().zip(c).map(|(x, y)| (*x * y.conj()).real()).sum()
    };
    let bnorm = hdot(b, b).sqrt();
    let mut u = vec![T::ZERO; n];
    if bnorm == 0.0 {
        return Ok(u);
    }
    let mut r = b.to_vec();
    let mut z: Vec<T> = r.iter().map(|&v| v * inv_diag).collect();
    let mut p = z.clone();
    let mut ap = vec![T::ZERO; n];
    let mut rz = hdot(&r, &z);
    let apply = |u: &[T], out: &mut [T]| {
        laplacian_into(grid, u, out);
        for (o, &v) in out.iter_mut().zip(u) {
            *o = v * shift - *o;
        }
    };
    for _ in 0..max_iter {
        apply(&p, &mut ap);
        let pap = hdot(&ap, &p);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for k in 0..n {
            u[k] += p[k] * alpha;
            r[k] -= ap[k] * alpha;
        }
        if hdot(&r, &r).sqrt() <= tol * bnorm {
            return Ok(u);
        }
        for k in 0..n {
            z[k] = r[k] * inv_diag;
        }
        let rz_new = hdot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + p[k] * beta;
        }
    }
    Err(LabError::SolverDiverged(format!(
        "conjugate gradient residual {:.3e} above {:.1e} after {max_iter} iterations",
        hdot(&r, &r).sqrt() / bnorm,
        tol
    )))
}

/// Dirichlet data on the faces of the box; `face(axis, side)` is indexed
/// by the node index along the remaining axis (a single value in 1D).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace<T> {
    grid: SpatialGrid,
    faces: Vec<[Vec<T>; 2]>,
}

impl<T: Scalar> BoundaryTrace<T> {
    pub fn zeros(grid: SpatialGrid) -> Self {
        Self::from_fn(grid, |_| T::ZERO)
    }

    /// Sample `g` at the boundary points facing each boundary-adjacent node.
    pub fn from_fn(grid: SpatialGrid, g: impl Fn(Point) -> T) -> Self {
        let mut faces = Vec::with_capacity(grid.dim());
        for axis in 0..grid.dim() {
            let other = 1 - axis;
            let m = if grid.dim() == 1 { 1 } else { grid.n(other) };
            let side = |s: usize| -> Vec<T> {
                let x_axis = if s == 0 { grid.lower(axis) } else { grid.upper(axis) };
                (0..m)
                    .map(|k| {
                        let mut p = [0.0; 2];
                        p[axis] = x_axis;
                        if grid.dim() == 2 {
                            p[other] = grid.coordinate(other, k as isize);
                        }
                        g(p)
                    })
                    .collect()
            };
            faces.push([side(0), side(1)]);
        }
        Self { grid, faces }
    }

    #[inline]
    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn face(&self, axis: usize, side: usize) -> &[T] {
        &self.faces[axis][side]
    }

    pub fn face_mut(&mut self, axis: usize, side: usize) -> &mut [T] {
        &mut self.faces[axis][side]
    }

    pub fn is_zero(&self) -> bool {
        self.faces.iter().all(|f| f.iter().all(|s| s.iter().all(|&v| v == T::ZERO)))
    }

    /// Pointwise transform of every boundary value.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        let faces = self
            .faces
            .iter()
            .map(|[a, b]| [a.iter().map(|&v| f(v)).collect(), b.iter().map(|&v| f(v)).collect()])
            .collect();
        Self { grid: self.grid, faces }
    }

    /// Add `B g`: the boundary values moved to the right-hand side of `−Δ_h`,
    /// i.e. `g / h²` in every boundary-adjacent row.
    pub fn lift_into(&self, rhs: &mut [T]) {
        let grid = &self.grid;
        for axis in 0..grid.dim() {
            let c = 1.0 / grid.spacing(axis).powi(2);
            let len = grid.n(axis);
            for side in 0..2 {
                let pos = if side == 0 { 0 } else { len - 1 };
                for (k, &g) in self.faces[axis][side].iter().enumerate() {
                    let idx = if axis == 0 { grid.index(pos, k) } else { grid.index(k, pos) };
                    rhs[idx] += g * c;
                }
            }
        }
    }
}

/// Solve `(I − Δ_h) u = rhs` with Dirichlet data `boundary` (zero if absent).
pub fn helmholtz_solve<T: Scalar>(
    grid: &SpatialGrid,
    rhs: &ScalarField<T>,
    boundary: Option<&BoundaryTrace<T>>,
    method: SolveMethod,
) -> Result<ScalarField<T>> {
    grid.check_same(rhs.grid())?;
    let mut b = rhs.values().to_vec();
    if let Some(bd) = boundary {
        grid.check_same(bd.grid())?;
        bd.lift_into(&mut b);
    }
    let u = match method {
        SolveMethod::Direct => Helmholtz::new(*grid, 1.0)?.solve(&b),
        SolveMethod::ConjugateGradient { tol, max_iter } => {
            conjugate_gradient(grid, 1.0, &b, tol, max_iter)?
        }
    };
    ScalarField::from_values(*grid, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Gaussian elimination with partial pivoting on the assembled matrix.
    fn dense_solve(grid: &SpatialGrid, shift: f64, b: &[f64]) -> Vec<f64> {
        let n = grid.len();
        let mut a = vec![vec![0.0; n + 1]; n];
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            let mut col = vec![0.0; n];
            laplacian_into(grid, &e, &mut col);
            for r in 0..n {
                a[r][k] = -col[r] + if r == k { shift } else { 0.0 };
            }
            a[k][n] = b[k];
        }
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..=n {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (a[r][n] - s) / a[r][r];
        }
        x
    }

    #[test]
    fn zero_rhs_zero_solution() {
        let g = SpatialGrid::new_1d(0.0, 1.0, 10).unwrap();
        let u = helmholtz_solve(&g, &ScalarField::<f64>::zeros(g), None, SolveMethod::Direct).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_mode_is_halved() {
        let g = SpatialGrid::new_1d(0.0, PI, 200).unwrap();
        let rhs = ScalarField::from_fn(g, |p| 2.0 * p[0].sin());
        let h2 = g.spacing(0).powi(2);
        for method in [SolveMethod::Direct, SolveMethod::ConjugateGradient { tol: 1e-12, max_iter: 5000 }] {
            let u = helmholtz_solve(&g, &rhs, None, method).unwrap();
            for (k, v) in u.values().iter().enumerate() {
                assert!((v - g.point(k)[0].sin()).abs() < h2);
            }
        }
    }

    #[test]
    fn direct_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for grid in [
            SpatialGrid::new_1d(0.0, 1.0, 16).unwrap(),
            SpatialGrid::new_2d([0.0, 0.0], [1.0, 2.0], [5, 7]).unwrap(),
            SpatialGrid::new_2d([-1.0, 0.0], [1.0, 1.0], [16, 16]).unwrap(),
        ] {
            for shift in [0.0, 1.0, 3.5] {
                let b: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let want = dense_solve(&grid, shift, &b);
                let got = Helmholtz::new(grid, shift).unwrap().solve(&b);
                let cg = conjugate_gradient(&grid, shift, &b, 1e-13, 10_000).unwrap();
                let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for k in 0..grid.len() {
                    assert!((got[k] - want[k]).abs() <= 1e-9 * scale);
                    assert!((cg[k] - want[k]).abs() <= 1e-9 * scale);
                }
            }
        }
    }

    #[test]
    fn boundary_data_harmonic_linear() {
        // u = 1 + 2x - y is discretely harmonic, so (−Δ_h) u = 0 with its trace.
        let grid = SpatialGrid::new_2d([0.0, 0.0], [1.0, 1.0], [9, 11]).unwrap();
        let bd = BoundaryTrace::from_fn(grid, |p| 1.0 + 2.0 * p[0] - p[1]);
        let mut b = vec![0.0; grid.len()];
        bd.lift_into(&mut b);
        let u = Helmholtz::new(grid, 0.0).unwrap().solve(&b);
        for (k, v) in u.iter().enumerate() {
            let p = grid.point(k);
            assert!((v - (1.0 + 2.0 * p[0] - p[1])).abs() < 1e-10);
        }
    }

    #[test]
    fn cg_reports_divergence_when_capped() {
        let grid = SpatialGrid::new_1d(0.0, 1.0, 64).unwrap();
        let b: Vec<f64> = (0..64).map(|k| (k as f64).sin()).collect();
        let err = conjugate_gradient(&grid, 1.0, &b, 1e-14, 2).unwrap_err();
        assert!(matches!(err, LabError::SolverDiverged(_)));
    }

    proptest! {
        #[test]
        fn solve_inverts_operator(seed in 0u64..500, nx in 3usize..12, ny in 3usize..12, two in any::<bool>()) {
            let grid = if two {
                SpatialGrid::new_2d([0.0, 0.0], [1.0, 1.3], [nx, ny]).unwrap()
            } else {
                SpatialGrid::new_1d(0.0, 2.0, nx * ny).unwrap()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u: Vec<Complex64> = (0..grid.len())
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let op = Helmholtz::new(grid, 1.0).unwrap();
            let mut f = vec![Complex64::new(0.0, 0.0); grid.len()];
            op.apply(&u, &mut f);
            let back = op.solve(&f);
            let num: f64 = back.iter().zip(&u).map(|(a, b)| (a - b).norm_sqr()).sum();
            let den: f64 = u.iter().map(|a| a.norm_sqr()).sum();
            prop_assert!((num / den).sqrt() < 1e-9);
        }
    }
}
