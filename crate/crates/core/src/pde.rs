//! Forward and adjoint solvers for the decomposed BZK and BBM systems.
//!
//! Both equations are written as `z_t = L(t) z + f` with `K = (I − Δ_h)⁻¹`:
//! `L = K − I` for BZK and `L(t) = −D·(A(t) K ·)` for BBM, where `D·` is the
//! centered divergence. Time stepping is Crank–Nicolson,
//! `(I − c L_{m+1}) z^{m+1} = (I + c L_m) z^m + c (f^m + f^{m+1})`, `c = dt/2`.
//!
//! The adjoint runs the exact transpose of that recursion,
//! `μ^{m+1} = (I − c L_{m+1}ᵀ)⁻¹ λ^{m+1}`, `λ^m = (I + c L_mᵀ) μ^{m+1}`,
//! so that `⟨z^M, λ^M⟩ = ⟨z^0, λ^0⟩ + Σ_m w_m ⟨f^m, ψ̂^m⟩` holds to rounding,
//! with trapezoid weights `w` and the paired trace `ψ̂` built from `μ`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::grid::{
    conjugate_gradient, divergence, dot_field, gradient, trapezoid_weights, Helmholtz, Point, Scalar,
    ScalarField, SolveMethod, SpaceTimeField, SpatialGrid, TimeGrid,
};

/// Which pseudo-parabolic equation is being solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Equation {
    Bzk,
    Bbm,
}

impl Equation {
    pub fn name(&self) -> &'static str {
        match self {
            Equation::Bzk => "bzk",
            Equation::Bbm => "bbm",
        }
    }
}

/// Advection fields that can be written in a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AdvectionSpec {
    Zero,
    Constant { a: [f64; 2] },
    /// `A(x, t) = M x + b`.
    Affine { m: [[f64; 2]; 2], b: [f64; 2] },
}

impl AdvectionSpec {
    pub fn eval(&self, x: Point, _t: f64) -> Point {
        match *self {
            AdvectionSpec::Zero => [0.0, 0.0],
            AdvectionSpec::Constant { a } => a,
            AdvectionSpec::Affine { m, b } => [
                m[0][0] * x[0] + m[0][1] * x[1] + b[0],
                m[1][0] * x[0] + m[1][1] * x[1] + b[1],
            ],
        }
    }
}

/// Sampled bounds on `A`, `∇·A`, `A_t` and `∇·A_t` over the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientBounds {
    pub sup_a: f64,
    pub sup_div_a: f64,
    pub sup_a_t: f64,
    pub sup_div_a_t: f64,
}

/// The BBM advection field sampled on every space-time node.
#[derive(Debug, Clone, PartialEq)]
pub struct BbmCoefficients {
    grid: SpatialGrid,
    time: TimeGrid,
    /// `a[m][axis][k]`.
    a: Vec<Vec<Vec<f64>>>,
}

impl BbmCoefficients {
    pub fn from_fn(grid: SpatialGrid, time: TimeGrid, f: impl Fn(Point, f64) -> Point) -> Result<Self> {
        let mut a = Vec::with_capacity(time.nodes());
        for m in 0..time.nodes() {
            let t = time.t(m);
            let mut comps = vec![vec![0.0; grid.len()]; grid.dim()];
            for k in 0..grid.len() {
                let v = f(grid.point(k), t);
                for (axis, c) in comps.iter_mut().enumerate() {
                    if !v[axis].is_finite() {
                        return Err(invalid(format!("advection field not finite at {:?}", grid.point(k))));
                    }
                    c[k] = v[axis];
                }
            }
            a.push(comps);
        }
        Ok(Self { grid, time, a })
    }

    pub fn from_spec(spec: &AdvectionSpec, grid: SpatialGrid, time: TimeGrid) -> Result<Self> {
        Self::from_fn(grid, time, |p, t| spec.eval(p, t))
    }

    pub fn constant(grid: SpatialGrid, time: TimeGrid, a: [f64; 2]) -> Self {
        Self::from_fn(grid, time, |_, _| a).expect("constant field is finite")
    }

    #[inline]
    pub fn component(&self, m: usize, axis: usize) -> &[f64] {
        &self.a[m][axis]
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn is_zero(&self) -> bool {
        self.a.iter().all(|s| s.iter().all(|c| c.iter().all(|&v| v == 0.0)))
    }

    /// Value of `A` at node `k` of slice `m`.
    pub fn at(&self, m: usize, k: usize) -> Point {
        let mut p = [0.0; 2];
        for (axis, c) in self.a[m].iter().enumerate() {
            p[axis] = c[k];
        }
        p
    }

    /// Sampled smoothness bounds by centered differences.
    pub fn bounds(&self) -> CoefficientBounds {
        let mut b = CoefficientBounds { sup_a: 0.0, sup_div_a: 0.0, sup_a_t: 0.0, sup_div_a_t: 0.0 };
        let dt = self.time.dt();
        let div = |m: usize| divergence(&self.grid, &self.a[m]);
        for m in 0..self.time.nodes() {
            for k in 0..self.grid.len() {
                let v = self.at(m, k);
                b.sup_a = b.sup_a.max((v[0] * v[0] + v[1] * v[1]).sqrt());
            }
            // interior rows only: the zero ghost would fake a jump at ∂Ω
            let d = div(m);
            for k in 0..self.grid.len() {
                if self.interior_row(k) {
                    b.sup_div_a = b.sup_div_a.max(d[k].abs());
                }
            }
            if m + 1 < self.time.nodes() {
                let dn = div(m + 1);
                for k in 0..self.grid.len() {
                    let v0 = self.at(m, k);
                    let v1 = self.at(m + 1, k);
                    let at = ((v1[0] - v0[0]).powi(2) + (v1[1] - v0[1]).powi(2)).sqrt() / dt;
                    b.sup_a_t = b.sup_a_t.max(at);
                    if self.interior_row(k) {
                        b.sup_div_a_t = b.sup_div_a_t.max((dn[k] - d[k]).abs() / dt);
                    }
                }
            }
        }
        b
    }

    fn interior_row(&self, k: usize) -> bool {
        let (i, j) = self.grid.coords(k);
        let inside = |p: usize, n: usize| p > 0 && p + 1 < n;
        inside(i, self.grid.n(0)) && (self.grid.dim() == 1 || inside(j, self.grid.n(1)))
    }
}

/// Output of a forward solve.
#[derive(Debug, Clone)]
pub struct EvolutionResult<T> {
    pub y: SpaceTimeField<T>,
    pub z: SpaceTimeField<T>,
    /// Relative residual of each implicit step.
    pub step_residuals: Vec<f64>,
}

/// Output of an adjoint solve.
#[derive(Debug, Clone)]
pub struct AdjointResult<T> {
    pub phi: SpaceTimeField<T>,
    /// Nodal adjoint state; the last slice is the terminal datum.
    pub psi: SpaceTimeField<T>,
    /// Trace paired with the forward source, `ψ̂^0 = μ^1`, `ψ̂^M = μ^M`,
    /// `ψ̂^m = (μ^m + μ^{m+1})/2`.
    pub psi_paired: SpaceTimeField<T>,
}

/// `(σ I − Δ_h)⁻¹` by the configured method.
#[derive(Debug, Clone)]
struct Elliptic {
    op: Helmholtz,
    method: SolveMethod,
}

impl Elliptic {
    fn new(grid: SpatialGrid, shift: f64, method: SolveMethod) -> Result<Self> {
        Ok(Self { op: Helmholtz::new(grid, shift)?, method })
    }

    fn solve<T: Scalar>(&self, b: &[T]) -> Result<Vec<T>> {
        match self.method {
            SolveMethod::Direct => Ok(self.op.solve(b)),
            SolveMethod::ConjugateGradient { tol, max_iter } => {
                conjugate_gradient(self.op.grid(), self.op.shift(), b, tol, max_iter)
            }
        }
    }
}

/// Contraction threshold and iteration cap of the BBM implicit solves.
const FIXED_POINT_TOL: f64 = 1e-15;
const FIXED_POINT_MAX: usize = 200;

fn norm<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.abs_sqr()).sum::<f64>().sqrt()
}

/// Crank–Nicolson solver for one equation on fixed grids.
#[derive(Debug, Clone)]
pub struct Evolution {
    grid: SpatialGrid,
    time: TimeGrid,
    equation: Equation,
    coeffs: Option<Arc<BbmCoefficients>>,
    k: Elliptic,
    /// BZK only: `(σ I − Δ)` with `σ = 1/(1 + c)` and `σ = 1/(1 − c)`.
    implicit_minus: Option<Elliptic>,
    implicit_plus: Option<Elliptic>,
}

impl Evolution {
    pub fn new(
        grid: SpatialGrid,
        time: TimeGrid,
        equation: Equation,
        coeffs: Option<BbmCoefficients>,
        method: SolveMethod,
    ) -> Result<Self> {
        let coeffs = match (equation, coeffs) {
            (Equation::Bzk, _) => None,
            (Equation::Bbm, None) => return Err(invalid("BBM needs an advection field")),
            (Equation::Bbm, Some(c)) => {
                grid.check_same(c.grid())?;
                time.check_same(c.time())?;
                Some(Arc::new(c))
            }
        };
        let c = 0.5 * time.dt();
        let (implicit_minus, implicit_plus) = if equation == Equation::Bzk {
            if c >= 1.0 {
                return Err(invalid("time step must be below 2"));
            }
            (
                Some(Elliptic::new(grid, 1.0 / (1.0 + c), method)?),
                Some(Elliptic::new(grid, 1.0 / (1.0 - c), method)?),
            )
        } else {
            (None, None)
        };
        Ok(Self { grid, time, equation, coeffs, k: Elliptic::new(grid, 1.0, method)?, implicit_minus, implicit_plus })
    }

    pub fn bzk(grid: SpatialGrid, time: TimeGrid) -> Result<Self> {
        Self::new(grid, time, Equation::Bzk, None, SolveMethod::Direct)
    }

    pub fn bbm(grid: SpatialGrid, time: TimeGrid, coeffs: BbmCoefficients) -> Result<Self> {
        Self::new(grid, time, Equation::Bbm, Some(coeffs), SolveMethod::Direct)
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
    pub fn equation(&self) -> Equation {
        self.equation
    }

    pub fn coefficients(&self) -> Option<&BbmCoefficients> {
        self.coeffs.as_deref()
    }

    /// `K u = (I − Δ_h)⁻¹ u`.
    pub fn apply_k<T: Scalar>(&self, u: &[T]) -> Result<Vec<T>> {
        self.k.solve(u)
    }

    /// `A_m · ∇_h u`.
    fn a_dot_grad<T: Scalar>(&self, m: usize, u: &[T]) -> Vec<T> {
        let a = self.coeffs.as_ref().expect("BBM coefficients");
        let g = gradient(&self.grid, u);
        let mut out = vec![T::ZERO; self.grid.len()];
        for (axis, ga) in g.iter().enumerate() {
            let c = a.component(m, axis);
            for k in 0..out.len() {
                out[k] += ga[k] * c[k];
            }
        }
        out
    }

    /// `L_m z`.
    pub fn apply_l<T: Scalar>(&self, m: usize, z: &[T]) -> Result<Vec<T>> {
        let kz = self.k.solve(z)?;
        Ok(match self.equation {
            Equation::Bzk => kz.iter().zip(z).map(|(&a, &b)| a - b).collect(),
            Equation::Bbm => {
                let a = self.coeffs.as_ref().expect("BBM coefficients");
                let flux: Vec<Vec<T>> = (0..self.grid.dim())
                    .map(|axis| kz.iter().zip(a.component(m, axis)).map(|(&v, &c)| v * c).collect())
                    .collect();
                divergence(&self.grid, &flux).into_iter().map(|v| -v).collect()
            }
        })
    }

    /// `L_mᵀ λ`, the adjoint velocity `φ` for BBM up to sign conventions:
    /// `K λ − λ` for BZK and `K (A_m · ∇_h λ)` for BBM.
    pub fn apply_lt<T: Scalar>(&self, m: usize, lam: &[T]) -> Result<Vec<T>> {
        match self.equation {
            Equation::Bzk => self.apply_l(m, lam),
            Equation::Bbm => self.k.solve(&self.a_dot_grad(m, lam)),
        }
    }

    /// Solve `(I + θ L_m) x = b` (or with `L_mᵀ` when `transpose`).
    fn solve_shifted<T: Scalar>(&self, m: usize, theta: f64, b: &[T], transpose: bool) -> Result<Vec<T>> {
        match self.equation {
            Equation::Bzk => {
                // (1−θ)I + θK = (1−θ)(σI − Δ) K with σ = 1/(1−θ)
                let c = 0.5 * self.time.dt();
                let solver = if theta < 0.0 { &self.implicit_minus } else { &self.implicit_plus };
                let solver = solver.as_ref().expect("BZK shifted solvers");
                debug_assert!((theta.abs() - c).abs() < 1e-15 * c.max(1.0));
                let mut lap_b = vec![T::ZERO; b.len()];
                crate::grid::laplacian_into(&self.grid, b, &mut lap_b);
                let ib: Vec<T> = b.iter().zip(&lap_b).map(|(&v, &l)| v - l).collect();
                let x = solver.solve(&ib)?;
                Ok(x.into_iter().map(|v| v / (1.0 - theta)).collect())
            }
            Equation::Bbm => {
                let bn = norm(b);
                let mut x = b.to_vec();
                if bn == 0.0 {
                    return Ok(x);
                }
                let mut last = f64::INFINITY;
                for _ in 0..FIXED_POINT_MAX {
                    let lx = if transpose { self.apply_lt(m, &x)? } else { self.apply_l(m, &x)? };
                    let next: Vec<T> = b.iter().zip(&lx).map(|(&bv, &l)| bv - l * theta).collect();
                    let diff: f64 =
                        next.iter().zip(&x).map(|(a, c)| (*a - *c).abs_sqr()).sum::<f64>().sqrt();
                    x = next;
                    let rel = diff / norm(&x).max(bn);
                    if rel <= FIXED_POINT_TOL {
                        return Ok(x);
                    }
                    if rel > 0.9 * last && rel > 1e-13 {
                        return Err(LabError::SolverDiverged(format!(
                            "implicit BBM step does not contract (increment {rel:.3e}); reduce dt or |A|"
                        )));
                    }
                    last = rel;
                }
                let lx = if transpose { self.apply_lt(m, &x)? } else { self.apply_l(m, &x)? };
                let res: f64 = b
                    .iter()
                    .zip(&x)
                    .zip(&lx)
                    .map(|((&bv, &xv), &l)| (xv + l * theta - bv).abs_sqr())
                    .sum::<f64>()
                    .sqrt();
                if res <= 1e-12 * bn {
                    Ok(x)
                } else {
                    Err(LabError::SolverDiverged(format!("implicit BBM step residual {:.3e}", res / bn)))
                }
            }
        }
    }

    /// `x + θ L_m x` (or `L_mᵀ`).
    fn apply_shifted<T: Scalar>(&self, m: usize, theta: f64, x: &[T], transpose: bool) -> Result<Vec<T>> {
        let lx = if transpose { self.apply_lt(m, x)? } else { self.apply_l(m, x)? };
        Ok(x.iter().zip(&lx).map(|(&a, &l)| a + l * theta).collect())
    }

    fn check_source<T: Scalar>(&self, f: &SpaceTimeField<T>) -> Result<()> {
        self.grid.check_same(f.grid())?;
        self.time.check_same(f.time())
    }

    /// March `z_t = L z + f` from `z0`; `f = None` means no source.
    pub fn forward<T: Scalar>(&self, z0: &[T], f: Option<&SpaceTimeField<T>>) -> Result<EvolutionResult<T>> {
        if z0.len() != self.grid.len() {
            return Err(LabError::ShapeMismatch("initial datum length differs from grid".into()));
        }
        if let Some(f) = f {
            self.check_source(f)?;
        }
        let c = 0.5 * self.time.dt();
        let mut slices = Vec::with_capacity(self.time.nodes());
        slices.push(z0.to_vec());
        let mut residuals = Vec::with_capacity(self.time.steps());
        for m in 0..self.time.steps() {
            let zm = &slices[m];
            let mut rhs = self.apply_shifted(m, c, zm, false)?;
            if let Some(f) = f {
                for ((r, &a), &b) in rhs.iter_mut().zip(f.slice(m)).zip(f.slice(m + 1)) {
                    *r += (a + b) * c;
                }
            }
            let next = self.solve_shifted(m + 1, -c, &rhs, false)?;
            let back = self.apply_shifted(m + 1, -c, &next, false)?;
            let rn = norm(&rhs);
            let res: f64 = back.iter().zip(&rhs).map(|(a, b)| (*a - *b).abs_sqr()).sum::<f64>().sqrt();
            residuals.push(if rn > 0.0 { res / rn } else { 0.0 });
            slices.push(next);
        }
        let y: Vec<Vec<T>> = slices.iter().map(|s| self.k.solve(s)).collect::<Result<_>>()?;
        Ok(EvolutionResult {
            y: SpaceTimeField::from_slices(self.grid, self.time, y)?,
            z: SpaceTimeField::from_slices(self.grid, self.time, slices)?,
            step_residuals: residuals,
        })
    }

    /// Exact transpose of [`Evolution::forward`] from the terminal datum.
    pub fn adjoint<T: Scalar>(&self, psi_t: &[T]) -> Result<AdjointResult<T>> {
        if psi_t.len() != self.grid.len() {
            return Err(LabError::ShapeMismatch("terminal datum length differs from grid".into()));
        }
        let c = 0.5 * self.time.dt();
        let steps = self.time.steps();
        let mut lam = vec![Vec::new(); steps + 1];
        let mut mu = vec![Vec::new(); steps + 1];
        lam[steps] = psi_t.to_vec();
        for m in (0..steps).rev() {
            mu[m + 1] = self.solve_shifted(m + 1, -c, &lam[m + 1], true)?;
            lam[m] = self.apply_shifted(m, c, &mu[m + 1], true)?;
        }
        let mut paired = Vec::with_capacity(steps + 1);
        paired.push(mu[1].clone());
        for m in 1..steps {
            paired.push(mu[m].iter().zip(&mu[m + 1]).map(|(&a, &b)| (a + b) * 0.5).collect());
        }
        paired.push(mu[steps].clone());
        self.finish_adjoint(lam, paired)
    }

    fn finish_adjoint<T: Scalar>(&self, lam: Vec<Vec<T>>, paired: Vec<Vec<T>>) -> Result<AdjointResult<T>> {
        let phi: Vec<Vec<T>> = lam
            .iter()
            .enumerate()
            .map(|(m, l)| match self.equation {
                Equation::Bzk => self.k.solve(l),
                Equation::Bbm => self.apply_lt(m, l),
            })
            .collect::<Result<_>>()?;
        Ok(AdjointResult {
            phi: SpaceTimeField::from_slices(self.grid, self.time, phi)?,
            psi: SpaceTimeField::from_slices(self.grid, self.time, lam)?,
            psi_paired: SpaceTimeField::from_slices(self.grid, self.time, paired)?,
        })
    }

    /// Backward Crank–Nicolson for `−ψ_t = Lᵀ ψ + E`, `ψ(T) = ψ_T`:
    /// `(I − c L_mᵀ) ψ^m = (I + c L_{m+1}ᵀ) ψ^{m+1} + c (E^m + E^{m+1})`.
    pub fn adjoint_with_source<T: Scalar>(&self, psi_t: &[T], source: &SpaceTimeField<T>) -> Result<AdjointResult<T>> {
        self.check_source(source)?;
        if psi_t.len() != self.grid.len() {
            return Err(LabError::ShapeMismatch("terminal datum length differs from grid".into()));
        }
        let c = 0.5 * self.time.dt();
        let steps = self.time.steps();
        let mut lam = vec![Vec::new(); steps + 1];
        lam[steps] = psi_t.to_vec();
        for m in (0..steps).rev() {
            let mut rhs = self.apply_shifted(m + 1, c, &lam[m + 1], true)?;
            for ((r, &a), &b) in rhs.iter_mut().zip(source.slice(m)).zip(source.slice(m + 1)) {
                *r += (a + b) * c;
            }
            lam[m] = self.solve_shifted(m, -c, &rhs, true)?;
        }
        let paired = lam.clone();
        self.finish_adjoint(lam, paired)
    }

    /// One step of the transposed recursion, `λ^{m+1} ↦ λ^m`.
    pub fn adjoint_step<T: Scalar>(&self, m: usize, lam_next: &[T]) -> Result<Vec<T>> {
        let c = 0.5 * self.time.dt();
        let mu = self.solve_shifted(m + 1, -c, lam_next, true)?;
        self.apply_shifted(m, c, &mu, true)
    }

    /// Inverse of [`Evolution::adjoint_step`], `λ^m ↦ λ^{m+1}`.
    pub fn adjoint_step_inverse<T: Scalar>(&self, m: usize, lam: &[T]) -> Result<Vec<T>> {
        let c = 0.5 * self.time.dt();
        let mu = self.solve_shifted(m, c, lam, true)?;
        self.apply_shifted(m + 1, -c, &mu, true)
    }
}

/// Pointwise product `v χ` on the space-time grid.
pub fn localized_source<T: Scalar>(v: &SpaceTimeField<T>, chi: &SpaceTimeField<f64>) -> Result<SpaceTimeField<T>> {
    v.zip_with(chi, |a, c| a * c)
}

pub fn solve_bzk_forward<T: Scalar>(
    z0: &ScalarField<T>,
    v: &SpaceTimeField<T>,
    chi: &SpaceTimeField<f64>,
) -> Result<EvolutionResult<T>> {
    let ev = Evolution::bzk(*z0.grid(), *v.time())?;
    ev.forward(z0.values(), Some(&localized_source(v, chi)?))
}

pub fn solve_bbm_forward<T: Scalar>(
    z0: &ScalarField<T>,
    v: &SpaceTimeField<T>,
    chi: &SpaceTimeField<f64>,
    a: &BbmCoefficients,
) -> Result<EvolutionResult<T>> {
    let ev = Evolution::bbm(*z0.grid(), *v.time(), a.clone())?;
    ev.forward(z0.values(), Some(&localized_source(v, chi)?))
}

pub fn solve_bzk_adjoint<T: Scalar>(psi_t: &ScalarField<T>, time: &TimeGrid) -> Result<AdjointResult<T>> {
    Evolution::bzk(*psi_t.grid(), *time)?.adjoint(psi_t.values())
}

pub fn solve_bbm_adjoint<T: Scalar>(psi_t: &ScalarField<T>, a: &BbmCoefficients) -> Result<AdjointResult<T>> {
    Evolution::bbm(*psi_t.grid(), *a.time(), a.clone())?.adjoint(psi_t.values())
}

/// `Σ_m w_m ⟨a^m, b^m⟩` with trapezoid weights.
pub fn spacetime_inner<T: Scalar>(a: &SpaceTimeField<T>, b: &SpaceTimeField<T>) -> T {
    let w = trapezoid_weights(a.time());
    let mut acc = T::ZERO;
    for (m, &wm) in w.iter().enumerate() {
        acc += dot_field(a.grid(), a.slice(m), b.slice(m)) * wm;
    }
    acc
}

/// The three terms of the duality identity and their mismatch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityTerms {
    pub initial: f64,
    pub source: f64,
    pub terminal: f64,
    /// `|⟨z0, ψ(0)⟩ + ∫∫ vχ ψ̂ − ⟨z(T), ψ_T⟩|`.
    pub absolute: f64,
    /// `absolute` over the largest term magnitude (0 when all vanish).
    pub relative: f64,
}

/// Evaluate the discrete duality identity for one instance.
pub fn duality_terms<T: Scalar>(
    ev: &Evolution,
    z0: &[T],
    v: &SpaceTimeField<T>,
    chi: &SpaceTimeField<f64>,
    psi_t: &[T],
) -> Result<DualityTerms> {
    let f = localized_source(v, chi)?;
    let fwd = ev.forward(z0, Some(&f))?;
    let adj = ev.adjoint(psi_t)?;
    let grid = ev.grid();
    let steps = ev.time().steps();
    let initial = dot_field(grid, z0, adj.psi.slice(0));
    let source = spacetime_inner(&f, &adj.psi_paired);
    let terminal = dot_field(grid, fwd.z.slice(steps), psi_t);
    let mag = |x: T| x.abs_sqr().sqrt();
    let absolute = mag(initial + source - terminal);
    let scale = mag(initial).max(mag(source)).max(mag(terminal));
    Ok(DualityTerms {
        initial: mag(initial),
        source: mag(source),
        terminal: mag(terminal),
        absolute,
        relative: if scale > 0.0 { absolute / scale } else { 0.0 },
    })
}

/// Relative duality mismatch for the chosen equation.
pub fn duality_residual<T: Scalar>(
    z0: &ScalarField<T>,
    v: &SpaceTimeField<T>,
    chi: &SpaceTimeField<f64>,
    psi_t: &ScalarField<T>,
    which: Equation,
    a: Option<&BbmCoefficients>,
) -> Result<f64> {
    let ev = Evolution::new(*z0.grid(), *v.time(), which, a.cloned(), SolveMethod::Direct)?;
    Ok(duality_terms(&ev, z0.values(), v, chi, psi_t.values())?.relative)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn rand_field(rng: &mut ChaCha8Rng, g: SpatialGrid, t: TimeGrid) -> SpaceTimeField<f64> {
        let slices = (0..t.nodes()).map(|_| rand_vec(rng, g.len())).collect();
        SpaceTimeField::from_slices(g, t, slices).unwrap()
    }

    /// Dense matrix of a linear map given by its action.
    fn dense(n: usize, apply: impl Fn(&[f64]) -> Vec<f64>) -> Vec<Vec<f64>> {
        let mut cols = Vec::with_capacity(n);
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            cols.push(apply(&e));
        }
        (0..n).map(|r| (0..n).map(|c| cols[c][r]).collect()).collect()
    }

    fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter().map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
    }

    /// Reference: classical RK4 on `z' = L(t) z + f(t)` at `dt/16`, with the
    /// dense `L` rebuilt from the stencil, `L(t)` and `f(t)` linear in time
    /// between nodes.
    fn refined_reference(
        ev: &Evolution,
        z0: &[f64],
        f: Option<&SpaceTimeField<f64>>,
    ) -> Vec<f64> {
        let n = z0.len();
        let time = *ev.time();
        let mats: Vec<Vec<Vec<f64>>> =
            (0..time.nodes()).map(|m| dense(n, |e| ev.apply_l(m, e).unwrap())).collect();
        let sub = 16;
        let h = time.dt() / sub as f64;
        let rhs = |t: f64, z: &[f64]| -> Vec<f64> {
            let pos = (t / time.dt()).min(time.steps() as f64 - 1e-12);
            let m = pos.floor() as usize;
            let th = pos - m as f64;
            let a = matvec(&mats[m], z);
            let b = matvec(&mats[m + 1], z);
            (0..n)
                .map(|k| {
                    let src = f.map_or(0.0, |f| (1.0 - th) * f.slice(m)[k] + th * f.slice(m + 1)[k]);
                    (1.0 - th) * a[k] + th * b[k] + src
                })
                .collect()
        };
        let mut z = z0.to_vec();
        for s in 0..time.steps() * sub {
            let t = s as f64 * h;
            let k1 = rhs(t, &z);
            let z2: Vec<f64> = (0..n).map(|k| z[k] + 0.5 * h * k1[k]).collect();
            let k2 = rhs(t + 0.5 * h, &z2);
            let z3: Vec<f64> = (0..n).map(|k| z[k] + 0.5 * h * k2[k]).collect();
            let k3 = rhs(t + 0.5 * h, &z3);
            let z4: Vec<f64> = (0..n).map(|k| z[k] + h * k3[k]).collect();
            let k4 = rhs(t + h, &z4);
            for k in 0..n {
                z[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
            }
        }
        z
    }

    #[test]
    fn zero_data_zero_solution() {
        let g = SpatialGrid::new_1d(0.0, 1.0, 8).unwrap();
        let t = TimeGrid::new(1.0, 8).unwrap();
        let z0 = ScalarField::<f64>::zeros(g);
        let v = SpaceTimeField::zeros(g, t);
        let chi = SpaceTimeField::from_fn(g, t, |_, _| 1.0);
        let r = solve_bzk_forward(&z0, &v, &chi).unwrap();
        assert!(r.z.values().iter().chain(r.y.values()).all(|&x| x == 0.0));
        let a = BbmCoefficients::constant(g, t, [1.0, 0.0]);
        let r = solve_bbm_forward(&z0, &v, &chi, &a).unwrap();
        assert!(r.z.values().iter().all(|&x| x == 0.0));
        let adj = solve_bzk_adjoint(&z0, &t).unwrap();
        assert!(adj.psi.values().iter().chain(adj.phi.values()).all(|&x| x == 0.0));
        let adj = solve_bbm_adjoint(&z0, &a).unwrap();
        assert!(adj.psi.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn bzk_eigenmode_decay() {
        let g = SpatialGrid::new_1d(0.0, PI, 100).unwrap();
        let t = TimeGrid::new(1.0, 100).unwrap();
        let z0 = ScalarField::from_fn(g, |p| p[0].sin());
        let v = SpaceTimeField::zeros(g, t);
        let chi = SpaceTimeField::zeros(g, t);
        let r = solve_bzk_forward(&z0, &v, &chi).unwrap();
        let tol = 1e-3;
        for m in [0, 50, 100] {
            let tm = t.t(m);
            for (k, &zv) in r.z.slice(m).iter().enumerate() {
                let x = g.point(k)[0];
                assert!((zv - (-tm / 2.0).exp() * x.sin()).abs() < tol);
                assert!((r.y.slice(m)[k] - 0.5 * (-tm / 2.0).exp() * x.sin()).abs() < tol);
            }
        }
        let adj = solve_bzk_adjoint(&z0, &t).unwrap();
        for m in [0, 30, 100] {
            let tm = t.t(m);
            for (k, &pv) in adj.psi.slice(m).iter().enumerate() {
                let x = g.point(k)[0];
                assert!((pv - (-(1.0 - tm) / 2.0).exp() * x.sin()).abs() < tol);
            }
        }
    }

    #[test]
    fn bzk_norm_nonincreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = SpatialGrid::new_2d([0.0, 0.0], [1.0, 1.0], [9, 7]).unwrap();
        let t = TimeGrid::new(2.0, 20).unwrap();
        let ev = Evolution::bzk(g, t).unwrap();
        let r = ev.forward(&rand_vec(&mut rng, g.len()), None).unwrap();
        let mut prev = f64::INFINITY;
        for m in 0..t.nodes() {
            let n = norm(r.z.slice(m));
            assert!(n <= prev * (1.0 + 1e-14));
            prev = n;
        }
    }

    #[test]
    fn frozen_bbm_without_advection() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = SpatialGrid::new_1d(0.0, 1.0, 12).unwrap();
        let t = TimeGrid::new(1.0, 10).unwrap();
        let ev = Evolution::bbm(g, t, BbmCoefficients::constant(g, t, [0.0, 0.0])).unwrap();
        let z0 = rand_vec(&mut rng, g.len());
        let r = ev.forward(&z0, None).unwrap();
        let y0 = ev.apply_k(&z0).unwrap();
        for m in 0..t.nodes() {
            assert_eq!(r.z.slice(m), &z0[..]);
            for (a, b) in r.y.slice(m).iter().zip(&y0) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        let adj = ev.adjoint(&z0).unwrap();
        for m in 0..t.nodes() {
            assert_eq!(adj.psi.slice(m), &z0[..]);
            assert!(adj.phi.slice(m).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn forward_matches_refined_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = SpatialGrid::new_1d(0.0, 1.0, 8).unwrap();
        let t = TimeGrid::new(0.5, 8).unwrap();
        let chi = SpaceTimeField::from_fn(g, t, |p, _| if p[0] < 0.5 { 1.0 } else { 0.3 });
        let smooth_v = SpaceTimeField::from_fn(g, t, |p, s| (3.0 * p[0] + s).sin() + 0.1 * (7.0 * p[0] * s).cos());
        let a = BbmCoefficients::from_fn(g, t, |p, s| [1.0 + 0.5 * p[0] * s, 0.0]).unwrap();
        for ev in [Evolution::bzk(g, t).unwrap(), Evolution::bbm(g, t, a).unwrap()] {
            let z0 = rand_vec(&mut rng, g.len());
            let f = localized_source(&smooth_v, &chi).unwrap();
            let got = ev.forward(&z0, Some(&f)).unwrap();
            let want = refined_reference(&ev, &z0, Some(&f));
            let err: f64 = got.z.slice(t.steps()).iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            // CN is second order; the reference is converged far beyond dt².
            assert!(err < 0.05 * t.dt().powi(2), "{:?}: {err}", ev.equation());
        }
    }

    #[test]
    fn bbm_adjoint_matches_refined_reference() {
        // ψ_t = −K(A·∇ψ) integrated backwards with the dense operator.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = SpatialGrid::new_1d(0.0, 1.0, 10).unwrap();
        let t = TimeGrid::new(1.0, 10).unwrap();
        let a = BbmCoefficients::constant(g, t, [2.0, 0.0]);
        let ev = Evolution::bbm(g, t, a).unwrap();
        let psi_t = rand_vec(&mut rng, g.len());
        let adj = ev.adjoint(&psi_t).unwrap();
        let lt = dense(g.len(), |e| ev.apply_lt(0, e).unwrap());
        let sub = 160;
        let h = t.horizon() / sub as f64;
        let mut p = psi_t.clone();
        for _ in 0..sub {
            let f = |x: &[f64]| -> Vec<f64> { matvec(&lt, x) };
            let k1 = f(&p);
            let p2: Vec<f64> = (0..p.len()).map(|k| p[k] + 0.5 * h * k1[k]).collect();
            let k2 = f(&p2);
            let p3: Vec<f64> = (0..p.len()).map(|k| p[k] + 0.5 * h * k2[k]).collect();
            let k3 = f(&p3);
            let p4: Vec<f64> = (0..p.len()).map(|k| p[k] + h * k3[k]).collect();
            let k4 = f(&p4);
            for k in 0..p.len() {
                p[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
            }
        }
        let err: f64 = adj.psi.slice(0).iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 0.05 * t.dt().powi(2), "{err}");
    }

    #[test]
    fn duality_holds_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for (dim, n) in [(1usize, 12usize), (2, 8)] {
            let g = if dim == 1 {
                SpatialGrid::new_1d(0.0, 1.0, n).unwrap()
            } else {
                SpatialGrid::new_2d([0.0, 0.0], [1.0, 1.0], [n, n]).unwrap()
            };
            let t = TimeGrid::new(1.0, 8).unwrap();
            let a = BbmCoefficients::from_fn(g, t, |p, s| [1.0 + p[1] * s, 0.5 - p[0]]).unwrap();
            for ev in [Evolution::bzk(g, t).unwrap(), Evolution::bbm(g, t, a).unwrap()] {
                let z0 = rand_vec(&mut rng, g.len());
                let v = rand_field(&mut rng, g, t);
                let chi = rand_field(&mut rng, g, t).map(|x| x.abs());
                let psi_t = rand_vec(&mut rng, g.len());
                let d = duality_terms(&ev, &z0, &v, &chi, &psi_t).unwrap();
                assert!(d.relative < 1e-12, "{:?} {d:?}", ev.equation());
            }
        }
    }

    #[test]
    fn complex_duality() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = SpatialGrid::new_1d(0.0, 1.0, 10).unwrap();
        let t = TimeGrid::new(1.0, 6).unwrap();
        let c = |rng: &mut ChaCha8Rng| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let ev = Evolution::bbm(g, t, BbmCoefficients::constant(g, t, [1.0, 0.0])).unwrap();
        let z0: Vec<Complex64> = (0..g.len()).map(|_| c(&mut rng)).collect();
        let psi_t: Vec<Complex64> = (0..g.len()).map(|_| c(&mut rng)).collect();
        let v = SpaceTimeField::from_slices(
            g,
            t,
            (0..t.nodes()).map(|_| (0..g.len()).map(|_| c(&mut rng)).collect()).collect(),
        )
        .unwrap();
        let chi = SpaceTimeField::from_fn(g, t, |p, _| p[0]);
        assert!(duality_terms(&ev, &z0, &v, &chi, &psi_t).unwrap().relative < 1e-12);
    }

    #[test]
    fn trivial_duality_cases() {
        let g = SpatialGrid::new_1d(0.0, 1.0, 8).unwrap();
        let t = TimeGrid::new(1.0, 8).unwrap();
        let zero = ScalarField::<f64>::zeros(g);
        let v = SpaceTimeField::zeros(g, t);
        let chi = SpaceTimeField::from_fn(g, t, |_, _| 1.0);
        let any = ScalarField::from_fn(g, |p| p[0]);
        assert_eq!(duality_residual(&any, &v, &chi, &zero, Equation::Bzk, None).unwrap(), 0.0);
        assert!(duality_residual(&zero, &v, &chi, &any, Equation::Bzk, None).unwrap() == 0.0);
    }

    #[test]
    fn adjoint_step_inverse_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let g = SpatialGrid::new_1d(0.0, 1.0, 16).unwrap();
        let t = TimeGrid::new(1.0, 10).unwrap();
        let a = BbmCoefficients::from_fn(g, t, |p, s| [1.0 + p[0] * s, 0.0]).unwrap();
        for ev in [Evolution::bzk(g, t).unwrap(), Evolution::bbm(g, t, a).unwrap()] {
            let l = rand_vec(&mut rng, g.len());
            let prev = ev.adjoint_step(3, &l).unwrap();
            let back = ev.adjoint_step_inverse(3, &prev).unwrap();
            for (x, y) in back.iter().zip(&l) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn source_adjoint_bzk_matches_transpose_without_source() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let g = SpatialGrid::new_1d(0.0, 1.0, 16).unwrap();
        let t = TimeGrid::new(1.0, 10).unwrap();
        let ev = Evolution::bzk(g, t).unwrap();
        let psi_t = rand_vec(&mut rng, g.len());
        let a = ev.adjoint(&psi_t).unwrap();
        let b = ev.adjoint_with_source(&psi_t, &SpaceTimeField::zeros(g, t)).unwrap();
        for (x, y) in a.psi.values().iter().zip(b.psi.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn bbm_mass_against_refined_reference() {
        // 1D, A ≡ 1, data concentrated away from ∂Ω: ∫z changes only by the
        // boundary flux of Ay, matched by the refined dense reference.
        let g = SpatialGrid::new_1d(0.0, 1.0, 40).unwrap();
        let t = TimeGrid::new(0.2, 10).unwrap();
        let ev = Evolution::bbm(g, t, BbmCoefficients::constant(g, t, [1.0, 0.0])).unwrap();
        let z0: Vec<f64> = g.points().map(|p| (-(p[0] - 0.5f64).powi(2) / 0.002).exp()).collect();
        let r = ev.forward(&z0, None).unwrap();
        let mass = |v: &[f64]| v.iter().sum::<f64>() * g.cell_volume();
        let want = refined_reference(&ev, &z0, None);
        let m_end = mass(r.z.slice(t.steps()));
        assert!((m_end - mass(&want)).abs() < 1e-6);
        // the drift is bounded by the flux of y at the boundary nodes
        let ymax = (0..t.nodes())
            .map(|m| r.y.slice(m)[0].abs().max(r.y.slice(m)[g.len() - 1].abs()))
            .fold(0.0, f64::max);
        assert!((m_end - mass(&z0)).abs() <= t.horizon() * ymax + 1e-12);
    }

    #[test]
    fn cg_method_agrees_with_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let g = SpatialGrid::new_2d([0.0, 0.0], [1.0, 1.0], [8, 8]).unwrap();
        let t = TimeGrid::new(1.0, 5).unwrap();
        let direct = Evolution::bzk(g, t).unwrap();
        let cg = Evolution::new(
            g,
            t,
            Equation::Bzk,
            None,
            SolveMethod::ConjugateGradient { tol: 1e-12, max_iter: 1000 },
        )
        .unwrap();
        let z0 = rand_vec(&mut rng, g.len());
        let a = direct.forward(&z0, None).unwrap();
        let b = cg.forward(&z0, None).unwrap();
        for (x, y) in a.z.values().iter().zip(b.z.values()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn bbm_requires_coefficients() {
        let g = SpatialGrid::new_1d(0.0, 1.0, 8).unwrap();
        let t = TimeGrid::new(1.0, 8).unwrap();
        assert!(Evolution::new(g, t, Equation::Bbm, None, SolveMethod::Direct).is_err());
        let bounds = BbmCoefficients::from_fn(g, t, |p, s| [p[0] * s, 0.0]).unwrap().bounds();
        assert!((bounds.sup_a - 8.0 / 9.0).abs() < 1e-12);
        assert!((bounds.sup_div_a - 1.0).abs() < 1e-9);
        assert!((bounds.sup_div_a_t - 1.0).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn transpose_identity(seed in 0u64..10_000, n in 3usize..12, steps in 2usize..9, bbm in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = SpatialGrid::new_1d(0.0, 1.0, n).unwrap();
            let t = TimeGrid::new(1.0, steps).unwrap();
            let ev = if bbm {
                let c = rng.gen_range(-2.0..2.0);
                Evolution::bbm(g, t, BbmCoefficients::from_fn(g, t, move |p, s| [c + p[0] * s, 0.0]).unwrap()).unwrap()
            } else {
                Evolution::bzk(g, t).unwrap()
            };
            let z0 = rand_vec(&mut rng, n);
            let v = rand_field(&mut rng, g, t);
            let chi = rand_field(&mut rng, g, t);
            let psi_t = rand_vec(&mut rng, n);
            let d = duality_terms(&ev, &z0, &v, &chi, &psi_t).unwrap();
            prop_assert!(d.relative < 1e-11);
        }
    }
}
