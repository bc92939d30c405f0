//! Squared-norm quadrature: midpoint in space, trapezoid in time.

use super::{Scalar, ScalarField, SpaceTimeField, TimeGrid};
use crate::error::{LabError, Result};

/// Trapezoid weights on the time nodes: `dt/2` at both ends, `dt` inside.
pub fn trapezoid_weights(time: &TimeGrid) -> Vec<f64> {
    let dt = time.dt();
    let mut w = vec![dt; time.nodes()];
    w[0] = 0.5 * dt;
    w[time.steps()] = 0.5 * dt;
    w
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(LabError::ShapeMismatch(format!("{what}: expected {want}, got {got}")));
    }
    Ok(())
}

/// `∫_mask |f|² weight dx`.
pub fn integrate_space<T: Scalar>(
    f: &ScalarField<T>,
    weight: Option<&[f64]>,
    mask: Option<&[bool]>,
) -> Result<f64> {
    let n = f.grid().len();
    if let Some(w) = weight {
        check_len("weight", w.len(), n)?;
    }
    if let Some(m) = mask {
        check_len("mask", m.len(), n)?;
    }
    let mut acc = 0.0;
    for (k, v) in f.values().iter().enumerate() {
        if mask.is_some_and(|m| !m[k]) {
            continue;
        }
        acc += v.abs_sqr() * weight.map_or(1.0, |w| w[k]);
    }
    Ok(acc * f.grid().cell_volume())
}

/// `∫∫ |f|² weight dx dt` over per-slice masks.
pub fn integrate_spacetime<T: Scalar>(
    f: &SpaceTimeField<T>,
    weight: Option<&SpaceTimeField<f64>>,
    mask: Option<&[Vec<bool>]>,
) -> Result<f64> {
    let grid = f.grid();
    let time = f.time();
    if let Some(w) = weight {
        grid.check_same(w.grid())?;
        time.check_same(w.time())?;
    }
    if let Some(m) = mask {
        check_len("mask slices", m.len(), time.nodes())?;
        for s in m {
            check_len("mask", s.len(), grid.len())?;
        }
    }
    let tw = trapezoid_weights(time);
    let mut acc = 0.0;
    for (m, &wt) in tw.iter().enumerate() {
        let slice = f.slice(m);
        let wslice = weight.map(|w| w.slice(m));
        let mslice = mask.map(|mk| mk[m].as_slice());
        let mut s = 0.0;
        for (k, v) in slice.iter().enumerate() {
            if mslice.is_some_and(|mk| !mk[k]) {
                continue;
            }
            s += v.abs_sqr() * wslice.map_or(1.0, |w| w[k]);
        }
        acc += wt * s;
    }
    Ok(acc * grid.cell_volume())
}

/// Fields that can be integrated as squared magnitudes.
pub trait Integrable {
    type Weight: ?Sized;
    type Mask: ?Sized;
    fn integrate_sqr(&self, weight: Option<&Self::Weight>, mask: Option<&Self::Mask>)
        -> Result<f64>;
}

impl<T: Scalar> Integrable for ScalarField<T> {
    type Weight = [f64];
    type Mask = [bool];
    fn integrate_sqr(&self, weight: Option<&[f64]>, mask: Option<&[bool]>) -> Result<f64> {
        integrate_space(self, weight, mask)
    }
}

impl<T: Scalar> Integrable for SpaceTimeField<T> {
    type Weight = SpaceTimeField<f64>;
    type Mask = [Vec<bool>];
    fn integrate_sqr(
        &self,
        weight: Option<&SpaceTimeField<f64>>,
        mask: Option<&[Vec<bool>]>,
    ) -> Result<f64> {
        integrate_spacetime(self, weight, mask)
    }
}

/// Squared-magnitude integral of a space or space-time field.
pub fn integrate<F: Integrable>(
    f: &F,
    weight: Option<&F::Weight>,
    mask: Option<&F::Mask>,
) -> Result<f64> {
    f.integrate_sqr(weight, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpatialGrid;
    use std::f64::consts::PI;

    #[test]
    fn constant_one_is_first_order() {
        let g = SpatialGrid::new_1d(0.0, 1.0, 99).unwrap();
        let f = ScalarField::from_fn(g, |_| 1.0);
        let v = integrate(&f, None, None).unwrap();
        assert!((v - 1.0).abs() <= 1.5 * g.spacing(0));
    }

    #[test]
    fn sine_squared_integral() {
        let g = SpatialGrid::new_1d(0.0, PI, 50).unwrap();
        let f = ScalarField::from_fn(g, |p| p[0].sin().sqrt());
        let v = integrate(&f, None, None).unwrap();
        // ∫ sin = 2; here |f|² = sin
        assert!((v - 2.0).abs() < g.spacing(0).powi(2));
        let f2 = ScalarField::from_fn(g, |p| p[0].sin());
        let v2 = integrate(&f2, None, None).unwrap();
        assert!((v2 - PI / 2.0).abs() < g.spacing(0).powi(2));
    }

    #[test]
    fn second_order_on_refinement() {
        // |f|² = x²(1-x)² e^{2x}: closed form by integration by parts.
        let exact = ((2.0f64).exp() - 7.0) / 4.0;
        let mut h = Vec::new();
        let mut err = Vec::new();
        for n in [9usize, 19, 39, 79] {
            let g = SpatialGrid::new_1d(0.0, 1.0, n).unwrap();
            let f = ScalarField::from_fn(g, |p| p[0] * (1.0 - p[0]) * p[0].exp());
            h.push(g.spacing(0));
            err.push((integrate(&f, None, None).unwrap() - exact).abs());
        }
        let slope = crate::stats::loglog_slope(&h, &err).unwrap();
        assert!(slope >= 1.8, "slope {slope}, errors {err:?}");
    }

    #[test]
    fn zero_field_and_shape_mismatch() {
        let g = SpatialGrid::new_1d(0.0, 1.0, 9).unwrap();
        let tg = TimeGrid::new(1.0, 4).unwrap();
        let f = SpaceTimeField::<f64>::zeros(g, tg);
        assert_eq!(integrate(&f, None, None).unwrap(), 0.0);
        let bad = vec![vec![true; 9]; 3];
        assert!(integrate(&f, None, Some(bad.as_slice())).is_err());
        let sf = ScalarField::<f64>::zeros(g);
        assert!(integrate(&sf, Some(&[1.0; 3][..]), None).is_err());
    }

    #[test]
    fn trapezoid_in_time_is_exact_for_linear() {
        let g = SpatialGrid::new_1d(0.0, 1.0, 9).unwrap();
        let tg = TimeGrid::new(2.0, 8).unwrap();
        let f = SpaceTimeField::from_fn(g, tg, |_, t| t.sqrt());
        let v = integrate(&f, None, None).unwrap();
        // ∫_0^2 t dt · (9 h) = 2 · 0.9
        assert!((v - 2.0 * 0.9).abs() < 1e-12);
    }
}
