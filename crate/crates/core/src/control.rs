//! Penalized HUM: null controls from the minimizer of
//! `J_β(ψ_T) = ½ Σ_m w_m ⟨χ²ψ̂^m, ψ̂^m⟩ + (β/2)‖ψ_T‖² + ⟨ψ(·,0), z0⟩`.
//!
//! `ψ̂` is the paired adjoint trace, so with `Λψ_T = z(T; z0 = 0, f = χ²ψ̂)`
//! and `e = z(T; z0, f = 0)` the gradient is `(Λ + β)ψ_T + e` exactly in the
//! discrete inner product. The control is `v = χψ̂`, entering the state as
//! `vχ`, and its cost is `Σ_m w_m ‖v^m‖² = ⟨ψ_T, Λψ_T⟩`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::flow::{rasterize_region, smooth_indicator, MovingRegion, RegionShape, Sweep1d};
use crate::grid::{dot_field, trapezoid_weights, SpaceTimeField, SpatialGrid, TimeGrid};
use crate::pde::{spacetime_inner, Equation, Evolution};

/// Default relative residual target and iteration cap of the CG loop.
pub const CG_TOL: f64 = 1e-8;
pub const CG_MAX_ITER: usize = 500;

/// One penalized HUM instance.
#[derive(Debug, Clone)]
pub struct HumProblem {
    pub evolution: Evolution,
    pub z0: Vec<f64>,
    pub region: MovingRegion,
    /// Smooth indicator of `region`, zero off its masks.
    pub chi: SpaceTimeField<f64>,
    pub beta: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl HumProblem {
    pub fn new(
        evolution: Evolution,
        z0: Vec<f64>,
        region: MovingRegion,
        chi: SpaceTimeField<f64>,
        beta: f64,
    ) -> Result<Self> {
        let p = Self { evolution, z0, region, chi, beta, tol: CG_TOL, max_iter: CG_MAX_ITER };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.evolution.grid();
        let t = self.evolution.time();
        if !(self.beta > 0.0) {
            return Err(invalid("penalty β must be positive"));
        }
        if self.z0.len() != g.len() {
            return Err(LabError::ShapeMismatch("z0 length differs from grid".into()));
        }
        g.check_same(self.region.grid())?;
        t.check_same(self.region.time())?;
        g.check_same(self.chi.grid())?;
        t.check_same(self.chi.time())?;
        for m in 0..t.nodes() {
            let mask = self.region.mask(m);
            if self.chi.slice(m).iter().zip(mask).any(|(&c, &inside)| c != 0.0 && !inside || c < 0.0) {
                return Err(invalid("χ must be nonnegative and vanish off the region"));
            }
        }
        Ok(())
    }

    pub fn equation(&self) -> Equation {
        self.evolution.equation()
    }

    /// `‖u‖²` in the grid inner product.
    fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        dot_field(self.evolution.grid(), a, b)
    }

    /// Paired adjoint trace `ψ̂` and `ψ(·,0)` from `ψ_T`.
    fn adjoint_trace(&self, psi_t: &[f64]) -> Result<(SpaceTimeField<f64>, Vec<f64>)> {
        let adj = self.evolution.adjoint(psi_t)?;
        Ok((adj.psi_paired, adj.psi.slice(0).to_vec()))
    }

    /// `v = χψ̂`, exactly zero where `χ = 0`.
    fn control_from(&self, paired: &SpaceTimeField<f64>) -> Result<SpaceTimeField<f64>> {
        paired.zip_with(&self.chi, |p, c| if c == 0.0 { 0.0 } else { c * p })
    }

    /// The state source `vχ = χ²ψ̂`.
    fn source_from(&self, paired: &SpaceTimeField<f64>) -> Result<SpaceTimeField<f64>> {
        paired.zip_with(&self.chi, |p, c| if c == 0.0 { 0.0 } else { c * c * p })
    }

    /// `z(T)` from `z0 = 0` under the source built from `ψ_T`.
    fn lambda(&self, psi_t: &[f64]) -> Result<Vec<f64>> {
        let (paired, _) = self.adjoint_trace(psi_t)?;
        let f = self.source_from(&paired)?;
        let zero = vec![0.0; psi_t.len()];
        let r = self.evolution.forward(&zero, Some(&f))?;
        Ok(r.z.slice(self.evolution.time().steps()).to_vec())
    }

    /// Free terminal state `e = z(T; z0, 0)`.
    pub fn free_state(&self) -> Result<Vec<f64>> {
        let r = self.evolution.forward(&self.z0, None)?;
        Ok(r.z.slice(self.evolution.time().steps()).to_vec())
    }

    /// `(J_β(ψ_T), ∇J_β(ψ_T))`, the gradient from a controlled forward solve.
    pub fn value_and_gradient(&self, psi_t: &[f64]) -> Result<(f64, Vec<f64>)> {
        if psi_t.len() != self.z0.len() {
            return Err(LabError::ShapeMismatch("ψ_T length differs from grid".into()));
        }
        let (paired, psi0) = self.adjoint_trace(psi_t)?;
        let f = self.source_from(&paired)?;
        let observed = spacetime_inner(&f, &paired);
        let j = 0.5 * observed + 0.5 * self.beta * self.inner(psi_t, psi_t) + self.inner(&psi0, &self.z0);
        let fwd = self.evolution.forward(&self.z0, Some(&f))?;
        let grad = fwd
            .z
            .slice(self.evolution.time().steps())
            .iter()
            .zip(psi_t)
            .map(|(&z, &p)| z + self.beta * p)
            .collect();
        Ok((j, grad))
    }

    /// CG on `(Λ + β)ψ = −e` from `ψ = 0`, then a verifying forward solve.
    pub fn solve(&self) -> Result<ControlSolution> {
        self.validate()?;
        let n = self.z0.len();
        let e = self.free_state()?;
        let b: Vec<f64> = e.iter().map(|v| -v).collect();
        let bnorm = self.inner(&b, &b).sqrt();
        let mut psi = vec![0.0; n];
        let mut r = b.clone();
        let mut p = r.clone();
        let mut rr = self.inner(&r, &r);
        let mut residuals = vec![if bnorm > 0.0 { 1.0 } else { 0.0 }];
        let mut values = vec![0.0];
        let mut iterations = 0;
        let mut converged = bnorm == 0.0;
        while !converged && iterations < self.max_iter {
            let lp = self.lambda(&p)?;
            let ap: Vec<f64> = lp.iter().zip(&p).map(|(&l, &q)| l + self.beta * q).collect();
            let pap = self.inner(&p, &ap);
            if !(pap > 0.0) {
                return Err(LabError::SolverDiverged(format!("HUM operator lost definiteness: ⟨p, Ap⟩ = {pap:e}")));
            }
            let a = rr / pap;
            for k in 0..n {
                psi[k] += a * p[k];
                r[k] -= a * ap[k];
            }
            let rr_new = self.inner(&r, &r);
            iterations += 1;
            let rel = rr_new.sqrt() / bnorm;
            residuals.push(rel);
            let sum: Vec<f64> = b.iter().zip(&r).map(|(x, y)| x + y).collect();
            values.push(-0.5 * self.inner(&psi, &sum));
            if rel <= self.tol {
                converged = true;
                break;
            }
            let beta_cg = rr_new / rr;
            for k in 0..n {
                p[k] = r[k] + beta_cg * p[k];
            }
            rr = rr_new;
        }
        let (paired, _) = self.adjoint_trace(&psi)?;
        let v = self.control_from(&paired)?;
        let f = self.source_from(&paired)?;
        let fwd = self.evolution.forward(&self.z0, Some(&f))?;
        let z_t = fwd.z.slice(self.evolution.time().steps());
        let final_norm = self.inner(z_t, z_t).sqrt();
        let w = trapezoid_weights(self.evolution.time());
        let cost: f64 = (0..w.len()).map(|m| w[m] * self.inner(v.slice(m), v.slice(m))).sum();
        let (j_opt, _) = self.value_and_gradient(&psi)?;
        Ok(ControlSolution {
            psi_t: psi,
            v,
            final_norm,
            initial_norm: self.inner(&self.z0, &self.z0).sqrt(),
            cost,
            j_opt,
            cg_iterations: iterations,
            residual_history: residuals,
            value_history: values,
            status: if converged { CgStatus::Converged } else { CgStatus::Stalled },
        })
    }
}

/// Outcome of the CG loop; a stall is reported, not raised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CgStatus {
    Converged,
    Stalled,
}

#[derive(Debug, Clone)]
pub struct ControlSolution {
    pub psi_t: Vec<f64>,
    /// `χψ̂`; zero bit for bit where `χ = 0`.
    pub v: SpaceTimeField<f64>,
    /// `‖z(T)‖` from the verifying forward solve.
    pub final_norm: f64,
    pub initial_norm: f64,
    pub cost: f64,
    pub j_opt: f64,
    pub cg_iterations: usize,
    /// `‖r_k‖ / ‖b‖`, starting at iteration 0.
    pub residual_history: Vec<f64>,
    /// `J_β` along the iterates, starting at `J_β(0) = 0`.
    pub value_history: Vec<f64>,
    pub status: CgStatus,
}

impl ControlSolution {
    /// `‖z(T)‖² ≤ 2β (J_β(0) − J_β(ψ_opt))`, with a small rounding slack.
    pub fn penalty_bound_holds(&self, beta: f64) -> bool {
        self.final_norm.powi(2) <= 2.0 * beta * (0.0 - self.j_opt) * (1.0 + 1e-6) + 1e-300
    }

    pub fn relative_final(&self) -> f64 {
        if self.initial_norm > 0.0 {
            self.final_norm / self.initial_norm
        } else {
            0.0
        }
    }
}

/// Convenience wrapper.
pub fn solve_null_control(problem: &HumProblem) -> Result<ControlSolution> {
    problem.solve()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Fixed,
    Moving,
}

impl RegionKind {
    pub fn name(&self) -> &'static str {
        match self {
            RegionKind::Fixed => "fixed",
            RegionKind::Moving => "moving",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub beta: f64,
    pub region_kind: RegionKind,
    pub cost: f64,
    pub final_norm: f64,
    pub cg_iters: usize,
    pub status: CgStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticCurve {
    pub equation: Equation,
    pub betas: Vec<f64>,
    pub fixed: Vec<CurvePoint>,
    pub moving: Vec<CurvePoint>,
    /// Cost growth factor per β-decade over the last two decades.
    pub growth_fixed: f64,
    pub growth_moving: f64,
}

/// `(cost_last / cost_{last−2})^{1/decades}` between the last and the
/// third-to-last β.
pub fn growth_factor(points: &[CurvePoint]) -> f64 {
    let n = points.len();
    if n < 3 {
        return f64::NAN;
    }
    let (a, b) = (&points[n - 3], &points[n - 1]);
    let decades = (a.beta / b.beta).log10();
    (b.cost / a.cost).powf(1.0 / decades)
}

/// A region with its smooth indicator.
#[derive(Debug, Clone)]
pub struct ControlRegion {
    pub region: MovingRegion,
    pub chi: SpaceTimeField<f64>,
}

impl ControlRegion {
    pub fn fixed(shape: RegionShape, grid: SpatialGrid, time: TimeGrid, rho: f64) -> Result<Self> {
        let region = MovingRegion::fixed(shape, grid, time);
        let chi = smooth_indicator(&region, rho)?;
        Ok(Self { region, chi })
    }

    /// `X(ω₀, t, 0)` of the standard one-dimensional sweep.
    pub fn sweep(sweep: &Sweep1d, grid: SpatialGrid, time: TimeGrid, rho: f64) -> Result<Self> {
        let flow = sweep.flow(time.dt() / 4.0)?;
        let region = rasterize_region(&flow, sweep.omega0(), &grid, &time)?;
        let chi = smooth_indicator(&region, rho)?;
        Ok(Self { region, chi })
    }

    pub fn problem(&self, evolution: &Evolution, z0: &[f64], beta: f64) -> Result<HumProblem> {
        HumProblem::new(evolution.clone(), z0.to_vec(), self.region.clone(), self.chi.clone(), beta)
    }
}

/// Solve for every `β` on both regions; cells run concurrently.
pub fn dichotomy_diagnostic(
    evolution: &Evolution,
    z0: &[f64],
    fixed: &ControlRegion,
    moving: &ControlRegion,
    betas: &[f64],
) -> Result<DiagnosticCurve> {
    if betas.is_empty() {
        return Err(invalid("β list must be nonempty"));
    }
    if betas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(invalid("β list must be strictly decreasing"));
    }
    let cells: Vec<(RegionKind, &ControlRegion, f64)> = betas
        .iter()
        .flat_map(|&b| [(RegionKind::Fixed, fixed, b), (RegionKind::Moving, moving, b)])
        .collect();
    let points: Vec<CurvePoint> = cells
        .par_iter()
        .map(|&(kind, reg, beta)| {
            let s = reg.problem(evolution, z0, beta)?.solve()?;
            Ok(CurvePoint {
                beta,
                region_kind: kind,
                cost: s.cost,
                final_norm: s.final_norm,
                cg_iters: s.cg_iterations,
                status: s.status,
            })
        })
        .collect::<Result<_>>()?;
    let fixed_pts: Vec<CurvePoint> = points.iter().filter(|c| c.region_kind == RegionKind::Fixed).copied().collect();
    let moving_pts: Vec<CurvePoint> = points.iter().filter(|c| c.region_kind == RegionKind::Moving).copied().collect();
    Ok(DiagnosticCurve {
        equation: evolution.equation(),
        betas: betas.to_vec(),
        growth_fixed: growth_factor(&fixed_pts),
        growth_moving: growth_factor(&moving_pts),
        fixed: fixed_pts,
        moving: moving_pts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::BbmCoefficients;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn problem(bbm: bool, n: usize, steps: usize, beta: f64) -> HumProblem {
        let g = SpatialGrid::new_1d(0.0, 1.0, n).unwrap();
        let t = TimeGrid::new(1.0, steps).unwrap();
        let ev = if bbm {
            Evolution::bbm(g, t, BbmCoefficients::constant(g, t, [1.0, 0.0])).unwrap()
        } else {
            Evolution::bzk(g, t).unwrap()
        };
        let region = MovingRegion::fixed(RegionShape::Interval { lo: 0.2, hi: 0.6 }, g, t);
        let chi = smooth_indicator(&region, 2.5 * g.spacing(0)).unwrap();
        let z0 = g.points().map(|p| (PI * p[0]).sin()).collect();
        HumProblem::new(ev, z0, region, chi, beta).unwrap()
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_initial_state_needs_no_control() {
        let mut p = problem(false, 15, 10, 1e-4);
        p.z0 = vec![0.0; p.z0.len()];
        let s = p.solve().unwrap();
        assert_eq!(s.final_norm, 0.0);
        assert!(s.v.values().iter().all(|&v| v == 0.0));
        assert_eq!(s.cg_iterations, 0);
        let (j, _) = p.value_and_gradient(&vec![0.0; p.z0.len()]).unwrap();
        assert_eq!(j, 0.0);
    }

    #[test]
    fn gradient_at_zero_is_free_state() {
        let p = problem(true, 15, 10, 1e-3);
        let (j, g) = p.value_and_gradient(&vec![0.0; p.z0.len()]).unwrap();
        assert_eq!(j, 0.0);
        let e = p.free_state().unwrap();
        for (a, b) in g.iter().zip(&e) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for bbm in [false, true] {
            let p = problem(bbm, 12, 8, 1e-2);
            let psi = rand_vec(&mut rng, 12);
            let d = rand_vec(&mut rng, 12);
            let (_, g) = p.value_and_gradient(&psi).unwrap();
            let tau = 1e-5;
            let plus: Vec<f64> = psi.iter().zip(&d).map(|(a, b)| a + tau * b).collect();
            let minus: Vec<f64> = psi.iter().zip(&d).map(|(a, b)| a - tau * b).collect();
            let fd = (p.value_and_gradient(&plus).unwrap().0 - p.value_and_gradient(&minus).unwrap().0) / (2.0 * tau);
            let exact = p.inner(&g, &d);
            assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1e-12), "{fd} vs {exact}");
        }
    }

    #[test]
    fn cg_values_decrease_and_bound_holds() {
        for bbm in [false, true] {
            let p = problem(bbm, 31, 40, 1e-5);
            let s = p.solve().unwrap();
            assert!(s.value_history.windows(2).all(|w| w[1] < w[0]), "{:?}", s.value_history);
            assert!(s.penalty_bound_holds(p.beta));
            assert!((s.j_opt - s.value_history.last().unwrap()).abs() <= 1e-8 * s.j_opt.abs());
            for m in 0..p.evolution.time().nodes() {
                for (k, &v) in s.v.slice(m).iter().enumerate() {
                    if p.chi.slice(m)[k] == 0.0 {
                        assert_eq!(v.to_bits(), 0u64);
                    }
                }
            }
        }
    }

    #[test]
    fn full_region_is_cheap() {
        let g = SpatialGrid::new_1d(0.0, 1.0, 31).unwrap();
        let t = TimeGrid::new(1.0, 40).unwrap();
        let ev = Evolution::bzk(g, t).unwrap();
        let region = MovingRegion::fixed(RegionShape::Interval { lo: -1.0, hi: 2.0 }, g, t);
        let chi = SpaceTimeField::from_fn(g, t, |_, _| 1.0);
        let full = ControlRegion { region, chi };
        let z0: Vec<f64> = g.points().map(|p| (PI * p[0]).sin()).collect();
        let curve = dichotomy_diagnostic(&ev, &z0, &full, &full, &[1e-2, 1e-3, 1e-4, 1e-5]).unwrap();
        assert!(curve.growth_fixed < 1.05);
        assert!(curve.fixed.iter().zip(&curve.moving).all(|(a, b)| a.cost == b.cost));
    }

    #[test]
    fn rejects_unsorted_betas() {
        let p = problem(false, 15, 10, 1e-4);
        let reg = ControlRegion { region: p.region.clone(), chi: p.chi.clone() };
        assert!(dichotomy_diagnostic(&p.evolution, &p.z0, &reg, &reg, &[1e-3, 1e-2]).is_err());
        assert!(dichotomy_diagnostic(&p.evolution, &p.z0, &reg, &reg, &[]).is_err());
        let mut bad = p.clone();
        bad.beta = 0.0;
        assert!(bad.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn functional_is_convex(seed in 0u64..1000, bbm in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = problem(bbm, 10, 6, 1e-3);
            let a = rand_vec(&mut rng, 10);
            let b = rand_vec(&mut rng, 10);
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let ja = p.value_and_gradient(&a).unwrap().0;
            let jb = p.value_and_gradient(&b).unwrap().0;
            let jm = p.value_and_gradient(&mid).unwrap().0;
            prop_assert!(jm <= 0.5 * (ja + jb) + 1e-10 * (ja.abs() + jb.abs()).max(1.0));
        }
    }
}
