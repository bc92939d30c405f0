//! Centered finite-difference operators with zero ghost values.
//!
//! The divergence uses the same centered stencil per component as the
//! gradient, so `divergence` is exactly the negative transpose of `gradient`.

use super::{Scalar, ScalarField, SpatialGrid};

/// `out = Δ_h f` with the 3-point (1D) or 5-point (2D) stencil.
pub fn laplacian_into<T: Scalar>(grid: &SpatialGrid, f: &[T], out: &mut [T]) {
    debug_assert_eq!(f.len(), grid.len());
    debug_assert_eq!(out.len(), grid.len());
    let nx = grid.n(0);
    let ny = grid.n(1);
    let cx = 1.0 / (grid.spacing(0) * grid.spacing(0));
    let cy = if grid.dim() == 2 { 1.0 / (grid.spacing(1) * grid.spacing(1)) } else { 0.0 };
    for j in 0..ny {
        for i in 0..nx {
            let k = i + nx * j;
            let c = f[k];
            let w = if i > 0 { f[k - 1] } else { T::ZERO };
            let e = if i + 1 < nx { f[k + 1] } else { T::ZERO };
            let mut v = (w + e - c * 2.0) * cx;
            if grid.dim() == 2 {
                let s = if j > 0 { f[k - nx] } else { T::ZERO };
                let n = if j + 1 < ny { f[k + nx] } else { T::ZERO };
                v += (s + n - c * 2.0) * cy;
            }
            out[k] = v;
        }
    }
}

pub fn apply_laplacian<T: Scalar>(f: &ScalarField<T>) -> ScalarField<T> {
    let grid = *f.grid();
    let mut out = vec![T::ZERO; grid.len()];
    laplacian_into(&grid, f.values(), &mut out);
    ScalarField::from_values(grid, out).expect("length preserved")
}

/// Centered difference along one axis, `(f[k+1] - f[k-1]) / 2h`.
fn centered_axis<T: Scalar>(grid: &SpatialGrid, f: &[T], axis: usize, out: &mut [T]) {
    let nx = grid.n(0);
    let ny = grid.n(1);
    let c = 0.5 / grid.spacing(axis);
    let (stride, len) = if axis == 0 { (1, nx) } else { (nx, ny) };
    for j in 0..ny {
        for i in 0..nx {
            let k = i + nx * j;
            let pos = if axis == 0 { i } else { j };
            let lo = if pos > 0 { f[k - stride] } else { T::ZERO };
            let hi = if pos + 1 < len { f[k + stride] } else { T::ZERO };
            out[k] = (hi - lo) * c;
        }
    }
}

/// Centered gradient, one vector per axis.
pub fn gradient<T: Scalar>(grid: &SpatialGrid, f: &[T]) -> Vec<Vec<T>> {
    (0..grid.dim())
        .map(|a| {
            let mut out = vec![T::ZERO; grid.len()];
            centered_axis(grid, f, a, &mut out);
            out
        })
        .collect()
}

/// Centered divergence of a vector field given per component.
pub fn divergence<T: Scalar>(grid: &SpatialGrid, components: &[Vec<T>]) -> Vec<T> {
    let mut out = vec![T::ZERO; grid.len()];
    let mut tmp = vec![T::ZERO; grid.len()];
    for (a, comp) in components.iter().enumerate().take(grid.dim()) {
        centered_axis(grid, comp, a, &mut tmp);
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o += *t;
        }
    }
    out
}

/// Hermitian grid inner product `h^N Σ a_k conj(b_k)`.
pub fn dot_field<T: Scalar>(grid: &SpatialGrid, a: &[T], b: &[T]) -> T {
    let mut acc = T::ZERO;
    for (x, y) in a.iter().zip(b) {
        acc += *x * y.conj();
    }
    acc * grid.cell_volume()
}
