//! WKB packet for the BBM adjoint `−ψ_t + Δψ_t − A·∇ψ = 0`.
//!
//! `ψ_h = e^{iα/h}(f0 + h f1 + h² f2)` with `α = x·ξ0 + i|x−x0|²/2`. The
//! residual is taken from the discrete adjoint recursion itself, so adding
//! the correction makes `ψ = ψ_h + c` an exact discrete adjoint solution.
//! Products `b·∇α` with complex `∇α = ξ0 + i(x − x0)` are bilinear.
//!
//! Two corrector conventions are offered. `Printed` takes the displayed
//! formulas with `|∇α|²` read as the Hermitian norm `|ξ0|² + |x − x0|²`
//! (never below `|ξ0|²`). `Cancelling` uses the bilinear `∇α·∇α` and the
//! signs that remove the `h⁻¹` and `h⁰` terms of the residual; besides the
//! denominator it flips the sign of `f1` and of the `∫A·∇f0` term of `f2`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bzk::fixed_masks;
use super::{BeamReport, BeamRow};
use crate::error::{invalid, Result};
use crate::flow::RegionShape;
use crate::grid::{
    gradient, integrate_space, integrate_spacetime, laplacian_into, Point, ScalarField, SpaceTimeField,
    SpatialGrid, TimeGrid,
};
use crate::pde::{BbmCoefficients, Equation, Evolution};

type C = Complex64;

const I: C = C::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectorConvention {
    #[default]
    Printed,
    Cancelling,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WkbBeamParams {
    pub h: f64,
    /// Nonzero frequency vector.
    pub xi0: Point,
    pub x0: Point,
    /// `f0 ≡ 1` on `B_{δ/2}(x0)` and vanishes off `B_δ(x0)`.
    pub delta: f64,
    pub dim: usize,
    #[serde(default)]
    pub convention: CorrectorConvention,
}

impl WkbBeamParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dim == 1 || self.dim == 2) {
            return Err(invalid("beam dimension must be 1 or 2"));
        }
        if !(self.h > 0.0) {
            return Err(invalid("h must be positive"));
        }
        if self.xi0[..self.dim].iter().all(|&v| v == 0.0) {
            return Err(invalid("ξ0 must be nonzero"));
        }
        if !(self.delta > 0.0) {
            return Err(invalid("δ must be positive"));
        }
        Ok(())
    }

    /// `B_δ(x0) ⊂ Ω` and disjoint from the closure of the region.
    pub fn check_geometry(&self, grid: &SpatialGrid, region: &RegionShape) -> Result<()> {
        for axis in 0..self.dim {
            if self.x0[axis] - self.delta <= grid.lower(axis) || self.x0[axis] + self.delta >= grid.upper(axis) {
                return Err(invalid("B_δ(x0) must lie inside Ω"));
            }
        }
        if region.distance(self.x0, self.dim) <= self.delta {
            return Err(invalid("B_δ(x0) must avoid the observation region"));
        }
        Ok(())
    }

    fn offset(&self, x: Point) -> Point {
        let mut d = [0.0; 2];
        for a in 0..self.dim {
            d[a] = x[a] - self.x0[a];
        }
        d
    }

    /// `∇α = ξ0 + i(x − x0)`.
    fn grad_alpha(&self, x: Point) -> [C; 2] {
        let d = self.offset(x);
        let mut g = [C::new(0.0, 0.0); 2];
        for a in 0..self.dim {
            g[a] = C::new(self.xi0[a], d[a]);
        }
        g
    }

    /// Hermitian `|∇α|² = |ξ0|² + |x − x0|²`.
    fn grad_alpha_sq(&self, x: Point) -> f64 {
        let d = self.offset(x);
        (0..self.dim).map(|a| self.xi0[a] * self.xi0[a] + d[a] * d[a]).sum()
    }

    /// Corrector denominator: Hermitian `|∇α|²` or bilinear `∇α·∇α`.
    fn denominator(&self, x: Point) -> C {
        match self.convention {
            CorrectorConvention::Printed => C::new(self.grad_alpha_sq(x), 0.0),
            CorrectorConvention::Cancelling => {
                let g = self.grad_alpha(x);
                (0..self.dim).fold(C::new(0.0, 0.0), |s, a| s + g[a] * g[a])
            }
        }
    }

    /// `−1` for the displayed signs, `+1` for the cancelling ones.
    fn sign(&self) -> f64 {
        match self.convention {
            CorrectorConvention::Printed => -1.0,
            CorrectorConvention::Cancelling => 1.0,
        }
    }

    /// `e^{iα/h} = e^{i x·ξ0/h} e^{−|x−x0|²/(2h)}`.
    fn phase(&self, x: Point) -> C {
        let d = self.offset(x);
        let r2: f64 = d.iter().map(|v| v * v).sum();
        let lin: f64 = (0..self.dim).map(|a| x[a] * self.xi0[a]).sum();
        C::from_polar((-r2 / (2.0 * self.h)).exp(), lin / self.h)
    }

    /// `(f0, ∇f0)`.
    fn cutoff(&self, x: Point) -> (f64, Point) {
        let d = self.offset(x);
        let r = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let half = 0.5 * self.delta;
        if r <= half {
            return (1.0, [0.0, 0.0]);
        }
        if r >= self.delta {
            return (0.0, [0.0, 0.0]);
        }
        let s = (r - half) / half;
        let (v, dv) = smoothstep9(s);
        let dr = -dv / half;
        (1.0 - v, [dr * d[0] / r, dr * d[1] / r])
    }
}

/// Degree-9 smoothstep and its derivative; C⁴ at both ends.
fn smoothstep9(s: f64) -> (f64, f64) {
    let s = s.clamp(0.0, 1.0);
    let v = s.powi(5) * (126.0 + s * (-420.0 + s * (540.0 + s * (-315.0 + 70.0 * s))));
    let d = 630.0 * s.powi(4) * (1.0 - s).powi(4);
    (v, d)
}

/// Sampled WKB packet and its residuals.
#[derive(Debug, Clone)]
pub struct WkbFields {
    pub params: WkbBeamParams,
    pub f0: Vec<f64>,
    pub f1: SpaceTimeField<C>,
    pub f2: SpaceTimeField<C>,
    pub psi_h: SpaceTimeField<C>,
    /// `ρ^m = ψ_h^m − Φ_m ψ_h^{m+1}` with `Φ_m` the discrete adjoint step;
    /// the last slice is zero.
    pub step_residual: SpaceTimeField<C>,
    /// Continuum-scaled residual `R ≈ (I − Δ_h) ρ / dt`.
    pub residual: SpaceTimeField<C>,
}

/// Trapezoid tail integrals `∫_{t_m}^T g dτ` for every node `m`.
fn tail_integrals(time: &TimeGrid, g: &[Vec<C>]) -> Vec<Vec<C>> {
    let n = g[0].len();
    let dt = time.dt();
    let mut out = vec![vec![C::new(0.0, 0.0); n]; time.nodes()];
    for m in (0..time.steps()).rev() {
        for k in 0..n {
            out[m][k] = out[m + 1][k] + (g[m][k] + g[m + 1][k]) * (0.5 * dt);
        }
    }
    out
}

/// Sample `f0, f1, f2, ψ_h` and the discrete residual on the evolution's grids.
pub fn bbm_wkb_fields_with(p: &WkbBeamParams, ev: &Evolution) -> Result<WkbFields> {
    p.validate()?;
    let a = ev.coefficients().ok_or_else(|| invalid("WKB packet needs the BBM evolution"))?;
    let grid = *ev.grid();
    let time = *ev.time();
    if grid.dim() != p.dim {
        return Err(invalid("beam and grid dimensions differ"));
    }
    let pts: Vec<Point> = grid.points().collect();
    let cut: Vec<(f64, Point)> = pts.iter().map(|&x| p.cutoff(x)).collect();
    let f0: Vec<f64> = cut.iter().map(|c| c.0).collect();
    let ga: Vec<[C; 2]> = pts.iter().map(|&x| p.grad_alpha(x)).collect();
    let gsq: Vec<C> = pts.iter().map(|&x| p.denominator(x)).collect();
    let sign = p.sign();
    let dim = p.dim;
    let nodes = time.nodes();
    let dot = |v: [C; 2], w: [C; 2]| (0..dim).fold(C::new(0.0, 0.0), |s, ax| s + v[ax] * w[ax]);

    // ∫_t^T A dτ, per axis
    let ia: Vec<Vec<Vec<C>>> = (0..dim)
        .map(|ax| {
            let g: Vec<Vec<C>> =
                (0..nodes).map(|m| a.component(m, ax).iter().map(|&v| C::new(v, 0.0)).collect()).collect();
            tail_integrals(&time, &g)
        })
        .collect();
    let ia_at = |m: usize, k: usize| {
        let mut v = [C::new(0.0, 0.0); 2];
        for ax in 0..dim {
            v[ax] = ia[ax][m][k];
        }
        v
    };

    // f1 = ∓i f0 g with g = (∫A·∇α)/|∇α|²
    let g1: Vec<Vec<C>> = (0..nodes)
        .map(|m| (0..grid.len()).map(|k| dot(ia_at(m, k), ga[k]) / gsq[k]).collect())
        .collect();
    let f1: Vec<Vec<C>> = g1.iter().map(|g| g.iter().zip(&f0).map(|(&v, &c)| I * v * (sign * c)).collect()).collect();

    // ∫_t^T f1 A dτ, per axis
    let jf: Vec<Vec<Vec<C>>> = (0..dim)
        .map(|ax| {
            let g: Vec<Vec<C>> =
                (0..nodes).map(|m| f1[m].iter().zip(a.component(m, ax)).map(|(&f, &c)| f * c).collect()).collect();
            tail_integrals(&time, &g)
        })
        .collect();

    // ∇f1 = −i(g ∇f0 + f0 ∇g): ∇g by centered differences, ∇f0 exact, so
    // the support of f1 and f2 stays inside that of f0.
    let delta_alpha = I * dim as f64;
    let f2: Vec<Vec<C>> = (0..nodes)
        .map(|m| {
            let gg = gradient(&grid, &g1[m]);
            (0..grid.len())
                .map(|k| {
                    if f0[k] == 0.0 {
                        return C::new(0.0, 0.0);
                    }
                    let mut grad_f1 = [C::new(0.0, 0.0); 2];
                    let mut grad_f0 = [C::new(0.0, 0.0); 2];
                    for ax in 0..dim {
                        grad_f0[ax] = C::new(cut[k].1[ax], 0.0);
                        grad_f1[ax] = I * sign * (g1[m][k] * cut[k].1[ax] + gg[ax][k] * f0[k]);
                    }
                    let mut jv = [C::new(0.0, 0.0); 2];
                    for ax in 0..dim {
                        jv[ax] = jf[ax][m][k];
                    }
                    let num = -dot(ia_at(m, k), grad_f0) - I * dot(jv, ga[k]) - 2.0 * I * dot(grad_f1, ga[k])
                        - I * f1[m][k] * delta_alpha;
                    // the cancelling numerator is the negated displayed one
                    -sign * num / gsq[k]
                })
                .collect()
        })
        .collect();

    let phase: Vec<C> = pts.iter().map(|&x| p.phase(x)).collect();
    let h = p.h;
    let psi_h: Vec<Vec<C>> = (0..nodes)
        .map(|m| {
            (0..grid.len())
                .map(|k| {
                    if f0[k] == 0.0 {
                        C::new(0.0, 0.0)
                    } else {
                        phase[k] * (f0[k] + f1[m][k] * h + f2[m][k] * (h * h))
                    }
                })
                .collect()
        })
        .collect();

    let mut rho: Vec<Vec<C>> = (0..time.steps())
        .into_par_iter()
        .map(|m| {
            let step = ev.adjoint_step(m, &psi_h[m + 1])?;
            Ok(psi_h[m].iter().zip(&step).map(|(&a, &b)| a - b).collect())
        })
        .collect::<Result<_>>()?;
    rho.push(vec![C::new(0.0, 0.0); grid.len()]);
    let dt = time.dt();
    let residual: Vec<Vec<C>> = rho
        .iter()
        .map(|r| {
            let mut lap = vec![C::new(0.0, 0.0); r.len()];
            laplacian_into(&grid, r, &mut lap);
            r.iter().zip(&lap).map(|(&v, &l)| (v - l) / dt).collect()
        })
        .collect();

    Ok(WkbFields {
        params: *p,
        f0,
        f1: SpaceTimeField::from_slices(grid, time, f1)?,
        f2: SpaceTimeField::from_slices(grid, time, f2)?,
        psi_h: SpaceTimeField::from_slices(grid, time, psi_h)?,
        step_residual: SpaceTimeField::from_slices(grid, time, rho)?,
        residual: SpaceTimeField::from_slices(grid, time, residual)?,
    })
}

/// [`bbm_wkb_fields_with`] on the grids carried by `a`.
pub fn bbm_wkb_fields(p: &WkbBeamParams, a: &BbmCoefficients) -> Result<WkbFields> {
    let ev = Evolution::bbm(*a.grid(), *a.time(), a.clone())?;
    bbm_wkb_fields_with(p, &ev)
}

/// Correction `c` with `c^0 = 0` and `c^{m+1} = Φ_m⁻¹(c^m + ρ^m)`, the
/// discrete counterpart of solving the adjoint equation with source `−R`
/// forward from zero. Then `ψ_h + c` satisfies `ψ^m = Φ_m ψ^{m+1}` exactly.
pub fn bbm_correction(ev: &Evolution, fields: &WkbFields) -> Result<SpaceTimeField<C>> {
    let grid = *ev.grid();
    let time = *ev.time();
    let mut c = vec![vec![C::new(0.0, 0.0); grid.len()]];
    for m in 0..time.steps() {
        let rhs: Vec<C> = c[m].iter().zip(fields.step_residual.slice(m)).map(|(&a, &b)| a + b).collect();
        c.push(ev.adjoint_step_inverse(m, &rhs)?);
    }
    SpaceTimeField::from_slices(grid, time, c)
}

fn bbm_member(p: WkbBeamParams, omega: &RegionShape, ev: &Evolution) -> Result<BeamRow> {
    let grid = *ev.grid();
    let time = *ev.time();
    let fields = bbm_wkb_fields_with(&p, ev)?;
    let corr = bbm_correction(ev, &fields)?;
    let psi = fields.psi_h.zip_with(&corr, |a, b| a + b)?;
    let masks = fixed_masks(omega, &grid, &time);
    let norm_initial = integrate_space(&ScalarField::from_values(grid, psi.slice(0).to_vec())?, None, None)?;
    let norm_localized = integrate_spacetime(&psi, None, Some(&masks))?;
    Ok(BeamRow {
        param: p.h,
        norm_initial,
        norm_localized,
        norm_correction: integrate_spacetime(&corr, None, None)?,
        ratio: norm_localized / norm_initial,
        norm_aux: integrate_spacetime(&fields.residual, None, None)?,
    })
}

/// `ψ = ψ_h + c` for each `h`, measured at `t = 0` and on `ω × (0,T)`.
pub fn bbm_beam_sweep(
    hs: &[f64],
    base: &WkbBeamParams,
    omega: &RegionShape,
    a: &BbmCoefficients,
) -> Result<BeamReport> {
    base.check_geometry(a.grid(), omega)?;
    let ev = Evolution::bbm(*a.grid(), *a.time(), a.clone())?;
    let rows: Vec<BeamRow> =
        hs.par_iter().map(|&h| bbm_member(WkbBeamParams { h, ..*base }, omega, &ev)).collect::<Result<_>>()?;
    BeamReport::new(Equation::Bbm, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(n: usize, steps: usize, a: f64) -> (WkbBeamParams, Evolution) {
        let g = SpatialGrid::new_1d(0.0, 1.0, n).unwrap();
        let t = TimeGrid::new(1.0, steps).unwrap();
        let p = WkbBeamParams {
            h: 0.02,
            xi0: [1.0, 0.0],
            x0: [0.7, 0.0],
            delta: 0.2,
            dim: 1,
            convention: CorrectorConvention::Printed,
        };
        (p, Evolution::bbm(g, t, BbmCoefficients::constant(g, t, [a, 0.0])).unwrap())
    }

    #[test]
    fn cutoff_is_one_near_center_and_compact() {
        let (p, ev) = setup(199, 10, 1.0);
        let f = bbm_wkb_fields_with(&p, &ev).unwrap();
        for (k, x) in ev.grid().points().enumerate() {
            let r = (x[0] - 0.7).abs();
            if r < 0.1 {
                assert_eq!(f.f0[k], 1.0);
            }
            if r >= 0.2 {
                assert_eq!(f.f0[k], 0.0);
                for m in 0..ev.time().nodes() {
                    assert_eq!(f.f1.slice(m)[k].norm(), 0.0);
                    assert_eq!(f.f2.slice(m)[k].norm(), 0.0);
                    assert_eq!(f.psi_h.slice(m)[k].norm(), 0.0);
                }
            }
        }
    }

    #[test]
    fn terminal_corrector_vanishes() {
        let (p, ev) = setup(99, 10, 1.5);
        let f = bbm_wkb_fields_with(&p, &ev).unwrap();
        let last = ev.time().steps();
        assert!(f.f1.slice(last).iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn zero_advection_leaves_only_stationary_packet() {
        let (p, ev) = setup(199, 10, 0.0);
        let f = bbm_wkb_fields_with(&p, &ev).unwrap();
        assert!(f.f1.values().iter().chain(f.f2.values()).all(|v| v.norm() == 0.0));
        // Φ_m is the identity for A ≡ 0 and ψ_h is constant in time
        assert!(f.step_residual.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn corrected_field_is_exact_discrete_adjoint() {
        let (p, ev) = setup(149, 12, 1.0);
        let f = bbm_wkb_fields_with(&p, &ev).unwrap();
        let c = bbm_correction(&ev, &f).unwrap();
        let psi = f.psi_h.zip_with(&c, |a, b| a + b).unwrap();
        let full = ev.adjoint(psi.slice(ev.time().steps())).unwrap();
        let scale = psi.max_abs();
        for (x, y) in psi.values().iter().zip(full.psi.values()) {
            assert!((x - y).norm() < 1e-11 * scale);
        }
        assert!(c.slice(0).iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn correctors_match_formulas_at_a_point() {
        // constant A: ∫_t^T A = a(T−t), f1 = −i f0 a(T−t)(ξ0 + i d)/(ξ0² + d²)
        let (p, ev) = setup(99, 10, 2.0);
        let f = bbm_wkb_fields_with(&p, &ev).unwrap();
        let k = 69; // x = 0.7
        let x = ev.grid().point(k)[0];
        let d = x - 0.7;
        for m in [0, 4] {
            let t = ev.time().t(m);
            let want = -I * 2.0 * (1.0 - t) * C::new(1.0, d) / (1.0 + d * d);
            assert!((f.f1.slice(m)[k] - want).norm() < 1e-12);
        }
    }

    #[test]
    fn hermitian_norm_bounded_below() {
        let p = WkbBeamParams { h: 0.01, xi0: [0.3, 0.4], x0: [0.5, 0.5], delta: 0.2, dim: 2, convention: CorrectorConvention::Printed };
        for x in [[0.5, 0.5], [0.0, 1.0], [0.9, 0.1]] {
            assert!(p.grad_alpha_sq(x) >= 0.25 - 1e-15);
        }
    }

    #[test]
    fn smoothstep9_is_c4() {
        let (v0, d0) = smoothstep9(0.0);
        let (v1, d1) = smoothstep9(1.0);
        assert_eq!((v0, d0), (0.0, 0.0));
        assert!((v1 - 1.0).abs() < 1e-12 && d1 == 0.0);
        let e = 1e-6;
        for s in [0.2, 0.5, 0.8] {
            let fd = (smoothstep9(s + e).0 - smoothstep9(s - e).0) / (2.0 * e);
            assert!((fd - smoothstep9(s).1).abs() < 1e-6);
        }
    }
}
