//! Fourier beam for the BZK adjoint.
//!
//! The terminal datum is `ψ̂_T(ξ) = ε^{N/4} θ(√ε(ξ − ξ̄/ε)) e^{−i x0·ξ}`.
//! After `ξ = ζ/√ε + ξ̄/ε` the free-space solution reads
//! `ψ̌(x,t) = (2π)^{−N} ε^{−N/4} e^{i(x−x0)·ξ̄/ε} ∫_{|ζ|≤1} θ(ζ) e^{i(x−x0)·ζ/√ε} M(ξ, T−t) dζ`
//! with `M(ξ, s) = e^{−s|ξ|²/(1+|ξ|²)}`; `φ̌` carries an extra `1/(1+|ξ|²)`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::quadrature::RuleLadder;
use super::{BeamReport, BeamRow};
use crate::error::{invalid, LabError, Result};
use crate::flow::RegionShape;
use crate::grid::{
    integrate_space, integrate_spacetime, BoundaryTrace, Point, ScalarField, SpaceTimeField, SpatialGrid,
    TimeGrid,
};
use crate::pde::{AdjointResult, Equation, Evolution};

/// `θ(ζ) = c (1 − |ζ|²)^THETA_POWER` on the unit ball.
pub const THETA_POWER: i32 = 4;

const QUAD_TOL: f64 = 1e-8;
const QUAD_BASE: usize = 16;
const QUAD_MAX: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BzkBeamParams {
    pub epsilon: f64,
    /// Unit frequency direction.
    pub xi_bar: Point,
    pub x0: Point,
    /// Decay order, an integer above `N/4`; enters only the expected rate.
    pub k: u32,
    /// Separation radius: `B_δ(x0)` must sit in `Ω` and avoid the region.
    pub delta: f64,
    pub dim: usize,
}

impl BzkBeamParams {
    /// Expected exponent `k − N/4` of the localized norm.
    pub fn expected_rate(&self) -> f64 {
        self.k as f64 - self.dim as f64 / 4.0
    }

    pub fn validate(&self, epsilon_max: f64) -> Result<()> {
        if !(self.dim == 1 || self.dim == 2) {
            return Err(invalid("beam dimension must be 1 or 2"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= epsilon_max) {
            return Err(invalid(format!("ε = {} outside (0, {epsilon_max}]", self.epsilon)));
        }
        let n2: f64 = self.xi_bar[..self.dim].iter().map(|v| v * v).sum();
        if (n2 - 1.0).abs() > 1e-12 {
            return Err(invalid("ξ̄ must be a unit vector"));
        }
        if (self.k as f64) <= self.dim as f64 / 4.0 {
            return Err(invalid("k must exceed N/4"));
        }
        if !(self.delta > 0.0) {
            return Err(invalid("δ must be positive"));
        }
        Ok(())
    }

    /// `B_δ(x0) ⊂ Ω` and `B_δ(x0)` disjoint from the closure of `region`.
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
}

/// `θ² ` integrates to one: `c² ∫_{|ζ|≤1} (1−|ζ|²)^8 dζ = 1`.
fn theta_constant(dim: usize) -> f64 {
    let p = 2 * THETA_POWER as u32;
    let integral = if dim == 1 {
        // 2 · (2p)!! / (2p+1)!!
        let mut v = 2.0;
        for j in 1..=p {
            v *= (2 * j) as f64 / (2 * j + 1) as f64;
        }
        v
    } else {
        PI / (p as f64 + 1.0)
    };
    1.0 / integral.sqrt()
}

/// Multiplier `e^{−s|ξ|²/(1+|ξ|²)}`.
#[inline]
pub fn multiplier(xi_sq: f64, s: f64) -> f64 {
    (-s * xi_sq / (1.0 + xi_sq)).exp()
}

/// Free-space BZK beam with its quadrature ladder.
#[derive(Debug, Clone)]
pub struct BzkBeam {
    params: BzkBeamParams,
    horizon: f64,
    theta_c: f64,
    ladder: Arc<RuleLadder>,
}

impl BzkBeam {
    pub fn new(params: BzkBeamParams, horizon: f64, epsilon_max: f64) -> Result<Self> {
        params.validate(epsilon_max)?;
        if !(horizon > 0.0) {
            return Err(invalid("horizon must be positive"));
        }
        Ok(Self {
            params,
            horizon,
            theta_c: theta_constant(params.dim),
            ladder: Arc::new(RuleLadder::new(QUAD_BASE, QUAD_MAX)),
        })
    }

    pub fn params(&self) -> &BzkBeamParams {
        &self.params
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    #[inline]
    pub fn theta(&self, zeta_sq: f64) -> f64 {
        if zeta_sq >= 1.0 {
            0.0
        } else {
            self.theta_c * (1.0 - zeta_sq).powi(THETA_POWER)
        }
    }

    /// `ξ(ζ)`.
    #[inline]
    fn frequency(&self, zeta: Point) -> Point {
        let se = self.params.epsilon.sqrt();
        let e = self.params.epsilon;
        [zeta[0] / se + self.params.xi_bar[0] / e, zeta[1] / se + self.params.xi_bar[1] / e]
    }

    /// Quadrature of both integrands with a rule of order `n`; returns the
    /// two sums and the sum of absolute integrand values.
    fn integrate(&self, n_index: usize, x: Point, t: f64) -> (Complex64, Complex64, f64) {
        let rule = &self.ladder.rules()[n_index];
        let p = &self.params;
        let se = p.epsilon.sqrt();
        let s = self.horizon - t;
        let y = [(x[0] - p.x0[0]) / se, (x[1] - p.x0[1]) / se];
        let mut acc_psi = Complex64::new(0.0, 0.0);
        let mut acc_phi = Complex64::new(0.0, 0.0);
        let mut mag = 0.0;
        let mut add = |zeta: Point, w: f64| {
            let zsq = zeta[0] * zeta[0] + zeta[1] * zeta[1];
            let th = self.theta(zsq);
            if th == 0.0 {
                return;
            }
            let xi = self.frequency(zeta);
            let xsq = xi[0] * xi[0] + xi[1] * xi[1];
            let amp = w * th * multiplier(xsq, s);
            let ph = Complex64::from_polar(1.0, y[0] * zeta[0] + y[1] * zeta[1]);
            acc_psi += ph * amp;
            acc_phi += ph * (amp / (1.0 + xsq));
            mag += amp.abs();
        };
        if p.dim == 1 {
            for (z, w) in rule.on_interval(-1.0, 1.0) {
                add([z, 0.0], w);
            }
        } else {
            let ang = &self.ladder.rules()[(n_index + 1).min(self.ladder.rules().len() - 1)];
            for (r, wr) in rule.on_interval(0.0, 1.0) {
                for (a, wa) in ang.on_interval(0.0, 2.0 * PI) {
                    add([r * a.cos(), r * a.sin()], wr * wa * r);
                }
            }
        }
        (acc_psi, acc_phi, mag)
    }

    /// `(ψ̌(x,t), φ̌(x,t))`, doubling the rule until both change by less than
    /// `1e−8` relative (or the change is at rounding level).
    pub fn evaluate(&self, x: Point, t: f64) -> Result<(Complex64, Complex64)> {
        let p = &self.params;
        let pref = (2.0 * PI).powi(-(p.dim as i32)) * p.epsilon.powf(-(p.dim as f64) / 4.0);
        let phase = Complex64::from_polar(
            pref,
            ((x[0] - p.x0[0]) * p.xi_bar[0] + (x[1] - p.x0[1]) * p.xi_bar[1]) / p.epsilon,
        );
        let (mut a_psi, mut a_phi, _) = self.integrate(0, x, t);
        for j in 1..self.ladder.rules().len() {
            let (b_psi, b_phi, mag) = self.integrate(j, x, t);
            let ok = |a: Complex64, b: Complex64, scale: f64| {
                let d = (a - b).norm();
                d <= QUAD_TOL * b.norm() || d <= 1e-14 * scale
            };
            let phi_scale = mag * p.epsilon * p.epsilon;
            if ok(a_psi, b_psi, mag) && ok(a_phi, b_phi, phi_scale) {
                return Ok((phase * b_psi, phase * b_phi));
            }
            a_psi = b_psi;
            a_phi = b_phi;
        }
        Err(LabError::QuadratureNotConverged(format!(
            "beam at x = {x:?}, t = {t} after {} nodes",
            self.ladder.max_order()
        )))
    }

    /// `ψ̌` and `φ̌` on every space-time node.
    pub fn sample(
        &self,
        grid: &SpatialGrid,
        time: &TimeGrid,
    ) -> Result<(SpaceTimeField<Complex64>, SpaceTimeField<Complex64>)> {
        self.check_grid(grid)?;
        let cols: Vec<Vec<(Complex64, Complex64)>> = grid
            .points()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&x| (0..time.nodes()).map(|m| self.evaluate(x, time.t(m))).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        let mut psi = Vec::with_capacity(time.nodes());
        let mut phi = Vec::with_capacity(time.nodes());
        for m in 0..time.nodes() {
            psi.push(cols.iter().map(|c| c[m].0).collect());
            phi.push(cols.iter().map(|c| c[m].1).collect());
        }
        Ok((
            SpaceTimeField::from_slices(*grid, *time, psi)?,
            SpaceTimeField::from_slices(*grid, *time, phi)?,
        ))
    }

    fn check_grid(&self, grid: &SpatialGrid) -> Result<()> {
        if grid.dim() != self.params.dim {
            return Err(LabError::ShapeMismatch("beam and grid dimensions differ".into()));
        }
        Ok(())
    }

    /// Free-space `‖ψ̌(·,t)‖²` on the Fourier side:
    /// `(2π)^{−N} ∫ θ(ζ)² M(ξ, T−t)² dζ`.
    pub fn parseval_norm_sqr(&self, t: f64) -> f64 {
        let p = &self.params;
        let s = self.horizon - t;
        let rule = &self.ladder.rules()[3];
        let f = |zeta: Point| {
            let th = self.theta(zeta[0] * zeta[0] + zeta[1] * zeta[1]);
            let xi = self.frequency(zeta);
            th * th * multiplier(xi[0] * xi[0] + xi[1] * xi[1], s).powi(2)
        };
        let mut acc = 0.0;
        if p.dim == 1 {
            for (z, w) in rule.on_interval(-1.0, 1.0) {
                acc += w * f([z, 0.0]);
            }
        } else {
            for (r, wr) in rule.on_interval(0.0, 1.0) {
                for (a, wa) in rule.on_interval(0.0, 2.0 * PI) {
                    acc += wr * wa * r * f([r * a.cos(), r * a.sin()]);
                }
            }
        }
        acc * (2.0 * PI).powi(-(p.dim as i32))
    }

    /// Free-space `‖ψ̌(·,t)‖²` in physical space: midpoint sum over the cube
    /// `|x − x0|_∞ ≤ half_width` with `n` cells per axis, also returning the
    /// share of that mass within distance `radius` of `x0`.
    pub fn spatial_norm_sqr(&self, t: f64, half_width: f64, n: usize, radius: f64) -> Result<(f64, f64)> {
        let p = &self.params;
        let h = 2.0 * half_width / n as f64;
        let coord = |i: usize, axis: usize| p.x0[axis] - half_width + (i as f64 + 0.5) * h;
        let pts: Vec<Point> = if p.dim == 1 {
            (0..n).map(|i| [coord(i, 0), 0.0]).collect()
        } else {
            (0..n).flat_map(|j| (0..n).map(move |i| (i, j))).map(|(i, j)| [coord(i, 0), coord(j, 1)]).collect()
        };
        let vals: Vec<(f64, bool)> = pts
            .par_iter()
            .map(|&x| {
                let d = ((x[0] - p.x0[0]).powi(2) + (x[1] - p.x0[1]).powi(2)).sqrt();
                self.evaluate(x, t).map(|(v, _)| (v.norm_sqr(), d <= radius))
            })
            .collect::<Result<_>>()?;
        let vol = h.powi(p.dim as i32);
        let total: f64 = vals.iter().map(|v| v.0).sum::<f64>() * vol;
        let inner: f64 = vals.iter().filter(|v| v.1).map(|v| v.0).sum::<f64>() * vol;
        Ok((total, if total > 0.0 { inner / total } else { 0.0 }))
    }
}

/// Single-point evaluation of the free-space beam pair.
pub fn bzk_beam_evaluate(p: &BzkBeamParams, x: Point, t: f64, horizon: f64, epsilon_max: f64) -> Result<(Complex64, Complex64)> {
    BzkBeam::new(*p, horizon, epsilon_max)?.evaluate(x, t)
}

/// `q = φ̌` on `∂Ω` at every time node.
pub fn boundary_data(beam: &BzkBeam, grid: &SpatialGrid, time: &TimeGrid) -> Result<Vec<BoundaryTrace<Complex64>>> {
    beam.check_grid(grid)?;
    (0..time.nodes())
        .map(|m| {
            let t = time.t(m);
            // evaluate eagerly so quadrature failures surface
            let err = std::cell::RefCell::new(None);
            let tr = BoundaryTrace::from_fn(*grid, |p| match beam.evaluate(p, t) {
                Ok(v) => v.1,
                Err(e) => {
                    err.borrow_mut().get_or_insert(e);
                    Complex64::new(0.0, 0.0)
                }
            });
            match err.into_inner() {
                Some(e) => Err(e),
                None => Ok(tr),
            }
        })
        .collect()
}

/// Adjoint BZK system with Dirichlet datum `−q` for `φ*` and `ψ*(T) = 0`.
///
/// With `(I − Δ_h) φ* = ψ* + B(−q)` the lift is `φ* = Kψ* + K B(−q)`, so
/// `−ψ*_t = (K − I) ψ* + K B(−q)`.
pub fn bzk_boundary_correction(
    q: &[BoundaryTrace<Complex64>],
    grid: &SpatialGrid,
    time: &TimeGrid,
) -> Result<AdjointResult<Complex64>> {
    if q.len() != time.nodes() {
        return Err(LabError::ShapeMismatch("one boundary trace per time node".into()));
    }
    let ev = Evolution::bzk(*grid, *time)?;
    let source: Vec<Vec<Complex64>> = q
        .iter()
        .map(|tr| {
            grid.check_same(tr.grid())?;
            let mut rhs = vec![Complex64::new(0.0, 0.0); grid.len()];
            tr.map(|v| -v).lift_into(&mut rhs);
            ev.apply_k(&rhs)
        })
        .collect::<Result<_>>()?;
    let source = SpaceTimeField::from_slices(*grid, *time, source)?;
    let mut adj = ev.adjoint_with_source(&vec![Complex64::new(0.0, 0.0); grid.len()], &source)?;
    // φ* = Kψ* + K B(−q)
    for m in 0..time.nodes() {
        for (p, s) in adj.phi.slice_mut(m).iter_mut().zip(source.slice(m)) {
            *p += *s;
        }
    }
    Ok(adj)
}

/// Region masks of a fixed shape on every slice.
pub(crate) fn fixed_masks(region: &RegionShape, grid: &SpatialGrid, time: &TimeGrid) -> Vec<Vec<bool>> {
    let mask: Vec<bool> = grid.points().map(|p| region.contains(p, grid.dim())).collect();
    vec![mask; time.nodes()]
}

/// One member of the BZK sweep.
fn bzk_member(
    params: BzkBeamParams,
    omega0: &RegionShape,
    grid: &SpatialGrid,
    time: &TimeGrid,
    epsilon_max: f64,
) -> Result<BeamRow> {
    let beam = BzkBeam::new(params, time.horizon(), epsilon_max)?;
    let (psi_bar, _) = beam.sample(grid, time)?;
    let q = boundary_data(&beam, grid, time)?;
    let star = bzk_boundary_correction(&q, grid, time)?;
    let psi = psi_bar.zip_with(&star.psi, |a, b| a + b)?;
    let masks = fixed_masks(omega0, grid, time);
    let norm_initial = integrate_space(&ScalarField::from_values(*grid, psi.slice(0).to_vec())?, None, None)?;
    let norm_localized = integrate_spacetime(&psi, None, Some(&masks))?;
    let norm_correction = integrate_spacetime(&star.psi, None, None)?;
    Ok(BeamRow {
        param: params.epsilon,
        norm_initial,
        norm_localized,
        norm_correction,
        ratio: norm_localized / norm_initial,
        norm_aux: beam.parseval_norm_sqr(0.0),
    })
}

/// `ψ^ε = ψ̄^ε + ψ*` for each `ε`, measured at `t = 0` and on `ω0 × (0,T)`.
pub fn bzk_beam_sweep(
    epsilons: &[f64],
    base: &BzkBeamParams,
    omega0: &RegionShape,
    grid: &SpatialGrid,
    time: &TimeGrid,
    epsilon_max: f64,
) -> Result<BeamReport> {
    base.check_geometry(grid, omega0)?;
    let rows: Vec<BeamRow> = epsilons
        .par_iter()
        .map(|&e| bzk_member(BzkBeamParams { epsilon: e, ..*base }, omega0, grid, time, epsilon_max))
        .collect::<Result<_>>()?;
    BeamReport::new(Equation::Bzk, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::super::quadrature::GaussLegendre;

    fn params(eps: f64) -> BzkBeamParams {
        BzkBeamParams { epsilon: eps, xi_bar: [1.0, 0.0], x0: [0.65, 0.0], k: 1, delta: 0.2, dim: 1 }
    }

    #[test]
    fn theta_has_unit_norm() {
        for dim in [1usize, 2] {
            let beam = BzkBeam::new(BzkBeamParams { dim, xi_bar: [1.0, 0.0], ..params(0.01) }, 1.0, 0.05).unwrap();
            let r = GaussLegendre::new(40);
            let mut acc = 0.0;
            if dim == 1 {
                for (z, w) in r.on_interval(-1.0, 1.0) {
                    acc += w * beam.theta(z * z).powi(2);
                }
            } else {
                for (rr, wr) in r.on_interval(0.0, 1.0) {
                    acc += 2.0 * PI * wr * rr * beam.theta(rr * rr).powi(2);
                }
            }
            assert!((acc - 1.0).abs() < 1e-12, "{dim}: {acc}");
        }
    }

    #[test]
    fn zero_mode_multiplier_is_one() {
        assert_eq!(multiplier(0.0, 3.0), 1.0);
        assert!((multiplier(1e12, 1.0) - (-1.0f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn terminal_value_matches_dft_of_datum() {
        // Inverse transform of ψ̂_T by a Riemann sum on a fine ξ grid.
        let p = params(0.01);
        let beam = BzkBeam::new(p, 1.0, 0.05).unwrap();
        let se = p.epsilon.sqrt();
        let n = 4000;
        let lo = 1.0 / p.epsilon - 1.0 / se;
        let dxi = 2.0 / se / n as f64;
        for x in [0.65, 0.66, 0.7, 0.5] {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..n {
                let xi = lo + (j as f64 + 0.5) * dxi;
                let zeta = se * (xi - 1.0 / p.epsilon);
                let hat = p.epsilon.powf(0.25) * beam.theta(zeta * zeta);
                acc += Complex64::from_polar(hat * dxi, (x - p.x0[0]) * xi);
            }
            acc /= 2.0 * PI;
            let (v, _) = beam.evaluate([x, 0.0], 1.0).unwrap();
            assert!((v - acc).norm() < 1e-6 * acc.norm().max(1e-3), "{x}: {v} vs {acc}");
        }
    }

    #[test]
    fn parseval_and_spatial_norm_agree() {
        for eps in [0.02, 0.005] {
            let beam = BzkBeam::new(params(eps), 1.0, 0.05).unwrap();
            let fourier = beam.parseval_norm_sqr(0.0);
            let (spatial, share) = beam.spatial_norm_sqr(0.0, 3.0, 24_000, 3.0 * (eps * (1.0 / eps).ln()).sqrt()).unwrap();
            assert!((fourier - spatial).abs() < 1e-4 * fourier, "{eps}: {fourier} vs {spatial}");
            assert!(share > 0.99, "{share}");
            let lo = (-2.0f64).exp() / (2.0 * PI).powi(2);
            let hi = 1.0 / (2.0 * PI).powi(2);
            assert!(fourier >= lo && fourier <= hi);
        }
    }

    #[test]
    fn quadrature_doubling_is_stable() {
        let beam = BzkBeam::new(params(0.0025), 1.0, 0.05).unwrap();
        for x in [0.2, 0.6, 0.65, 0.9] {
            let (a, _) = beam.evaluate([x, 0.0], 0.0).unwrap();
            let (b, _, _) = beam.integrate(5, [x, 0.0], 0.0);
            let pref = (2.0 * PI).powi(-1) * 0.0025f64.powf(-0.25);
            assert!((a.norm() - pref * b.norm()).abs() <= 1e-6 * a.norm().max(1e-12));
        }
    }

    #[test]
    fn zero_boundary_data_gives_zero_correction() {
        let g = SpatialGrid::new_1d(0.0, 1.0, 20).unwrap();
        let t = TimeGrid::new(1.0, 10).unwrap();
        let q = vec![BoundaryTrace::zeros(g); t.nodes()];
        let adj = bzk_boundary_correction(&q, &g, &t).unwrap();
        assert!(adj.psi.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn boundary_correction_solves_lifted_system() {
        // constant boundary datum: φ* = −q on ∂Ω, check the discrete relation
        // (I − Δ_h) φ* = ψ* + B(−q) row by row.
        let g = SpatialGrid::new_1d(0.0, 1.0, 30).unwrap();
        let t = TimeGrid::new(1.0, 20).unwrap();
        let q: Vec<_> = (0..t.nodes())
            .map(|m| BoundaryTrace::from_fn(g, |_| Complex64::new(t.t(m), 0.5)))
            .collect();
        let adj = bzk_boundary_correction(&q, &g, &t).unwrap();
        for m in [0, 7, 20] {
            let phi = adj.phi.slice(m);
            let mut lap = vec![Complex64::new(0.0, 0.0); g.len()];
            crate::grid::laplacian_into(&g, phi, &mut lap);
            let mut rhs = adj.psi.slice(m).to_vec();
            q[m].map(|v| -v).lift_into(&mut rhs);
            for k in 0..g.len() {
                assert!((phi[k] - lap[k] - rhs[k]).norm() < 1e-10);
            }
        }
        assert!(adj.psi.slice(t.steps()).iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut p = params(0.01);
        p.xi_bar = [0.5, 0.0];
        assert!(BzkBeam::new(p, 1.0, 0.05).is_err());
        assert!(BzkBeam::new(params(0.1), 1.0, 0.05).is_err());
        let g = SpatialGrid::new_1d(0.0, 1.0, 20).unwrap();
        let near = RegionShape::Interval { lo: 0.3, hi: 0.5 };
        assert!(params(0.01).check_geometry(&g, &near).is_err());
        let far = RegionShape::Interval { lo: 0.1, hi: 0.35 };
        assert!(params(0.01).check_geometry(&g, &far).is_ok());
    }
}
