//! Both sides of the Carleman inequalities, measured by quadrature.
//!
//! Weights such as `e^{−2sα}` under- or overflow long before the ratios
//! they enter do, so every term is accumulated as `Σ c_k e^{ℓ_k}` and all
//! terms of one evaluation share a single shift `L = max ℓ`. Reported
//! values are the shifted ones together with `log_scale = L`; ratios are
//! unaffected. Time slices where `r` is infinite carry zero weight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::flow::{rasterize_region, MovingRegion, Sweep1d};
use crate::grid::{divergence, gradient, laplacian_into, trapezoid_weights, Helmholtz, Point, SpatialGrid, TimeGrid};
use crate::pde::{BbmCoefficients, Equation, Evolution};
use crate::stats::loglog_slope;
use crate::weights::{assemble_weights, build_eta_sweep_1d, WeightFunction, WeightSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub value: f64,
}

/// Measured sides of one inequality; every term is `≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarlemanSides {
    pub inequality: String,
    pub lhs_terms: Vec<Term>,
    pub rhs_terms: Vec<Term>,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`; NaN when both vanish, infinite when only `rhs` does.
    pub ratio: f64,
    pub s: f64,
    pub lambda: f64,
    pub tau: f64,
    /// Common natural-log shift removed from every term.
    pub log_scale: f64,
}

impl CarlemanSides {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.lhs_terms.iter().chain(&self.rhs_terms).find(|t| t.name == name).map(|t| t.value)
    }
}

/// `Σ c_k e^{ℓ_k}` with the shift deferred.
#[derive(Debug, Clone, Default)]
struct LogTerm {
    logs: Vec<f64>,
    coefs: Vec<f64>,
}

impl LogTerm {
    fn push(&mut self, log: f64, coef: f64) {
        if coef != 0.0 && log > f64::NEG_INFINITY {
            self.logs.push(log);
            self.coefs.push(coef);
        }
    }

    fn max_log(&self) -> f64 {
        self.logs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn value(&self, shift: f64) -> f64 {
        self.logs.iter().zip(&self.coefs).map(|(&l, &c)| c * (l - shift).exp()).sum()
    }
}

struct Params {
    s: f64,
    lambda: f64,
    tau: f64,
}

fn assemble(inequality: &str, lhs: Vec<(&str, LogTerm)>, rhs: Vec<(&str, LogTerm)>, p: Params) -> CarlemanSides {
    let shift = lhs.iter().chain(&rhs).map(|(_, t)| t.max_log()).fold(f64::NEG_INFINITY, f64::max);
    let shift = if shift.is_finite() { shift } else { 0.0 };
    let eval = |v: Vec<(&str, LogTerm)>| -> Vec<Term> {
        v.into_iter().map(|(n, t)| Term { name: n.to_string(), value: t.value(shift) }).collect()
    };
    let lhs_terms = eval(lhs);
    let rhs_terms = eval(rhs);
    let l: f64 = lhs_terms.iter().map(|t| t.value).sum();
    let r: f64 = rhs_terms.iter().map(|t| t.value).sum();
    let ratio = if r > 0.0 {
        l / r
    } else if l == 0.0 {
        f64::NAN
    } else {
        f64::INFINITY
    };
    CarlemanSides {
        inequality: inequality.to_string(),
        lhs_terms,
        rhs_terms,
        lhs: l,
        rhs: r,
        ratio,
        s: p.s,
        lambda: p.lambda,
        tau: p.tau,
        log_scale: shift,
    }
}

fn check_weights(w: &WeightSet, region: &MovingRegion) -> Result<()> {
    w.eta.grid().check_same(region.grid())?;
    w.eta.time().check_same(region.time())
}

/// `Σ_a |∂_a f|²` per node from centered differences.
fn grad_sqr(grid: &SpatialGrid, f: &[f64]) -> Vec<f64> {
    let g = gradient(grid, f);
    (0..f.len()).map(|k| g.iter().map(|c| c[k] * c[k]).sum()).collect()
}

/// Centered time derivative of slice `m`, one-sided at the ends.
fn time_derivative(slices: &[&[f64]], m: usize, dt: f64) -> Vec<f64> {
    let last = slices.len() - 1;
    let (a, b, d) = if m == 0 {
        (1, 0, dt)
    } else if m == last {
        (last, last - 1, dt)
    } else {
        (m + 1, m - 1, 2.0 * dt)
    };
    slices[a].iter().zip(slices[b]).map(|(x, y)| (x - y) / d).collect()
}

/// Weighted estimate of `q` by `q_t`:
/// `sλ² ∫∫ ξ|q|² e^{−2sα} ≤ C (∫∫ |q_t|² e^{−2sα} + s²λ² ∫∫_{O₂} ξ² |q|² e^{−2sα})`.
pub fn eval_ode_carleman(q: &[Vec<f64>], w: &WeightSet, omega2: &MovingRegion) -> Result<CarlemanSides> {
    check_weights(w, omega2)?;
    let grid = *w.eta.grid();
    let time = *w.eta.time();
    if q.len() != time.nodes() || q.iter().any(|s| s.len() != grid.len()) {
        return Err(LabError::ShapeMismatch("q must have one grid slice per time node".into()));
    }
    let (s, lam) = (w.s, w.lambda);
    let tw = trapezoid_weights(&time);
    let vol = grid.cell_volume();
    let slices: Vec<&[f64]> = q.iter().map(|v| v.as_slice()).collect();
    let (mut lhs, mut rt, mut rl) = (LogTerm::default(), LogTerm::default(), LogTerm::default());
    for m in 0..time.nodes() {
        if w.is_singular(m) {
            continue;
        }
        let qt = time_derivative(&slices, m, time.dt());
        let c = tw[m] * vol;
        let (alpha, xi, mask) = (w.alpha.slice(m), w.xi.slice(m), omega2.mask(m));
        for k in 0..grid.len() {
            let l = -2.0 * s * alpha[k];
            let q2 = q[m][k] * q[m][k];
            lhs.push(l, c * s * lam * lam * xi[k] * q2);
            rt.push(l, c * qt[k] * qt[k]);
            if mask[k] {
                rl.push(l, c * s * s * lam * lam * xi[k] * xi[k] * q2);
            }
        }
    }
    Ok(assemble(
        "ode",
        vec![("weighted_l2", lhs)],
        vec![("time_derivative", rt), ("local", rl)],
        Params { s, lambda: lam, tau: f64::NAN },
    ))
}

/// Elliptic estimate on slice `m` for zero-trace `z`:
/// `∫ [λ⁴(τγ)³|z|² + λ²(τγ)|∇z|²] e^{2τγ} ≤ C (∫ |Δz|² e^{2τγ} + ∫_{O₂} λ⁴(τγ)³|z|² e^{2τγ})`.
pub fn eval_elliptic_carleman(
    z: &[f64],
    m: usize,
    w: &WeightSet,
    tau: f64,
    omega2: &MovingRegion,
) -> Result<CarlemanSides> {
    check_weights(w, omega2)?;
    let grid = *w.eta.grid();
    if z.len() != grid.len() || m >= w.eta.time().nodes() {
        return Err(LabError::ShapeMismatch("z must be one grid slice".into()));
    }
    let lam = w.lambda;
    let gamma = w.gamma.slice(m);
    let mask = omega2.mask(m);
    let vol = grid.cell_volume();
    let g2 = grad_sqr(&grid, z);
    let mut lap = vec![0.0; z.len()];
    laplacian_into(&grid, z, &mut lap);
    let (mut l0, mut l1, mut r0, mut rl) = (LogTerm::default(), LogTerm::default(), LogTerm::default(), LogTerm::default());
    for k in 0..grid.len() {
        let tg = tau * gamma[k];
        let l = 2.0 * tg;
        let zero = vol * lam.powi(4) * tg.powi(3) * z[k] * z[k];
        l0.push(l, zero);
        l1.push(l, vol * lam * lam * tg * g2[k]);
        r0.push(l, vol * lap[k] * lap[k]);
        if mask[k] {
            rl.push(l, zero);
        }
    }
    Ok(assemble(
        "elliptic",
        vec![("zero_order", l0), ("gradient", l1)],
        vec![("laplacian", r0), ("local", rl)],
        Params { s: f64::NAN, lambda: lam, tau },
    ))
}

/// Solve `−Δ_h z = g + ∇_h·G` with zero trace.
pub fn solve_divergence_problem(grid: &SpatialGrid, g: &[f64], big_g: &[Vec<f64>]) -> Result<Vec<f64>> {
    if g.len() != grid.len() || big_g.len() != grid.dim() || big_g.iter().any(|c| c.len() != grid.len()) {
        return Err(LabError::ShapeMismatch("(g, G) must be grid fields with one G component per axis".into()));
    }
    let div = divergence(grid, big_g);
    let rhs: Vec<f64> = g.iter().zip(&div).map(|(a, b)| a + b).collect();
    Ok(Helmholtz::new(*grid, 0.0)?.solve(&rhs))
}

/// `H⁻¹`-type estimate on slice `m` for the solution of `−Δz = g + ∇·G`:
/// `∫ [λ²(τγ)²|z|² + |∇z|²] e^{2τγ} ≤ C (∫ [λ⁻²(τγ)⁻¹|g|² + (τγ)|G|²] e^{2τγ} + ∫_{O₂} λ²(τγ)²|z|² e^{2τγ})`.
pub fn eval_h1_carleman(
    g: &[f64],
    big_g: &[Vec<f64>],
    m: usize,
    w: &WeightSet,
    tau: f64,
    omega2: &MovingRegion,
) -> Result<CarlemanSides> {
    check_weights(w, omega2)?;
    let grid = *w.eta.grid();
    if m >= w.eta.time().nodes() {
        return Err(invalid("slice index beyond the time grid"));
    }
    let z = solve_divergence_problem(&grid, g, big_g)?;
    let lam = w.lambda;
    let gamma = w.gamma.slice(m);
    let mask = omega2.mask(m);
    let vol = grid.cell_volume();
    let g2 = grad_sqr(&grid, &z);
    let (mut l0, mut l1, mut rg, mut rbig, mut rl) =
        (LogTerm::default(), LogTerm::default(), LogTerm::default(), LogTerm::default(), LogTerm::default());
    for k in 0..grid.len() {
        let tg = tau * gamma[k];
        let l = 2.0 * tg;
        let zero = vol * lam * lam * tg * tg * z[k] * z[k];
        l0.push(l, zero);
        l1.push(l, vol * g2[k]);
        rg.push(l, vol * g[k] * g[k] / (lam * lam * tg));
        let gg: f64 = big_g.iter().map(|c| c[k] * c[k]).sum();
        rbig.push(l, vol * tg * gg);
        if mask[k] {
            rl.push(l, zero);
        }
    }
    Ok(assemble(
        "h1",
        vec![("zero_order", l0), ("gradient", l1)],
        vec![("source", rg), ("flux", rbig), ("local", rl)],
        Params { s: f64::NAN, lambda: lam, tau },
    ))
}

/// Global estimate for the adjoint system solved from `ψ_T`.
///
/// BZK: `∫∫ [sλ²ξ|∇φ|² + s³λ⁴ξ³|φ|²] e^{−2sα} + ∫∫ sλ²ξ|ψ|² e^{−2sα}
/// + ∫∫ sλ²ξ* [|∇φ_t|² + |φ_t|²] e^{−2sα*} ≤ C s⁵λ⁶ ∫∫_O ξ⁵ e^{−4sα+2sα*} |ψ|²`.
/// BBM: first group `e^{−2sα}[|∇φ|² + s²λ²ξ²|φ|²]` and right side `s⁶λ² ξ⁶`.
pub fn eval_global_carleman(
    evolution: &Evolution,
    psi_t: &[f64],
    w: &WeightSet,
    omega: &MovingRegion,
) -> Result<CarlemanSides> {
    check_weights(w, omega)?;
    let grid = *evolution.grid();
    let time = *evolution.time();
    grid.check_same(w.eta.grid())?;
    time.check_same(w.eta.time())?;
    let adj = evolution.adjoint(psi_t)?;
    let (s, lam) = (w.s, w.lambda);
    let bzk = evolution.equation() == Equation::Bzk;
    let tw = trapezoid_weights(&time);
    let vol = grid.cell_volume();
    let phi: Vec<&[f64]> = (0..time.nodes()).map(|m| adj.phi.slice(m)).collect();
    let (mut t_grad, mut t_zero, mut t_psi, mut t_gt, mut t_t, mut rhs) = (
        LogTerm::default(),
        LogTerm::default(),
        LogTerm::default(),
        LogTerm::default(),
        LogTerm::default(),
        LogTerm::default(),
    );
    for m in 0..time.nodes() {
        if w.is_singular(m) {
            continue;
        }
        let c = tw[m] * vol;
        let (alpha, xi, mask) = (w.alpha.slice(m), w.xi.slice(m), omega.mask(m));
        let (a_star, x_star) = (w.alpha_star[m], w.xi_star[m]);
        let psi = adj.psi.slice(m);
        let gp = grad_sqr(&grid, phi[m]);
        let phit = time_derivative(&phi, m, time.dt());
        let gpt = grad_sqr(&grid, &phit);
        for k in 0..grid.len() {
            let l = -2.0 * s * alpha[k];
            let x = xi[k];
            let p2 = phi[m][k] * phi[m][k];
            let q2 = psi[k] * psi[k];
            if bzk {
                t_grad.push(l, c * s * lam * lam * x * gp[k]);
                t_zero.push(l, c * s.powi(3) * lam.powi(4) * x.powi(3) * p2);
            } else {
                t_grad.push(l, c * gp[k]);
                t_zero.push(l, c * s * s * lam * lam * x * x * p2);
            }
            t_psi.push(l, c * s * lam * lam * x * q2);
            let ls = -2.0 * s * a_star;
            t_gt.push(ls, c * s * lam * lam * x_star * gpt[k]);
            t_t.push(ls, c * s * lam * lam * x_star * phit[k] * phit[k]);
            if mask[k] {
                let lr = -4.0 * s * alpha[k] + 2.0 * s * a_star;
                let coef = if bzk { s.powi(5) * lam.powi(6) * x.powi(5) } else { s.powi(6) * lam * lam * x.powi(6) };
                rhs.push(lr, c * coef * q2);
            }
        }
    }
    Ok(assemble(
        if bzk { "global_bzk" } else { "global_bbm" },
        vec![
            ("phi_gradient", t_grad),
            ("phi_zero_order", t_zero),
            ("psi", t_psi),
            ("phi_t_gradient", t_gt),
            ("phi_t", t_t),
        ],
        vec![("local", rhs)],
        Params { s, lambda: lam, tau: f64::NAN },
    ))
}

/// Centered-difference derivatives of a function of space.
struct Stencil<'a> {
    f: &'a dyn Fn(Point) -> f64,
    h: [f64; 2],
    dim: usize,
}

impl Stencil<'_> {
    fn shift(p: Point, a: usize, d: f64) -> Point {
        let mut q = p;
        q[a] += d;
        q
    }

    fn grad(&self, p: Point) -> [f64; 2] {
        let mut g = [0.0; 2];
        for a in 0..self.dim {
            let h = self.h[a];
            g[a] = ((self.f)(Self::shift(p, a, h)) - (self.f)(Self::shift(p, a, -h))) / (2.0 * h);
        }
        g
    }

    fn lap_of(&self, f: &dyn Fn(Point) -> f64, p: Point) -> f64 {
        let c = f(p);
        (0..self.dim)
            .map(|a| {
                let h = self.h[a];
                (f(Self::shift(p, a, h)) - 2.0 * c + f(Self::shift(p, a, -h))) / (h * h)
            })
            .sum()
    }

    fn lap(&self, p: Point) -> f64 {
        self.lap_of(self.f, p)
    }

    fn bilap(&self, p: Point) -> f64 {
        self.lap_of(&|q| self.lap(q), p)
    }

    fn grad_sqr(&self, p: Point) -> f64 {
        let g = self.grad(p);
        g[0] * g[0] + g[1] * g[1]
    }

    /// `∇f · ∇|∇f|²`.
    fn drift(&self, p: Point) -> f64 {
        let g = self.grad(p);
        let inner = Stencil { f: &|q| self.grad_sqr(q), h: self.h, dim: self.dim };
        let d = inner.grad(p);
        g[0] * d[0] + g[1] * d[1]
    }
}

/// Terms of `‖e^{τγ}Δz‖² = ‖M₁w‖² + ‖M₂w‖² − 2(M₁w, M₂w)`, `w = e^{τγ}z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub weighted_laplacian: f64,
    pub m1: f64,
    pub m2: f64,
    pub cross: f64,
    /// `|lhs − (m1 + m2 − 2 cross)|` over the largest of the four magnitudes.
    pub residual: f64,
}

/// The self/skew-adjoint split on slice `t` for zero-trace `z`.
///
/// `M₁w = Δ_h w + τ²|∇γ|² w`, `M₂w = 2τ ∇γ·∇_h w + τ Δγ w`, with the
/// derivatives of `γ = e^{λη(·,t)}` by centered differences at the grid
/// spacing and those of `w` by the zero-ghost stencils.
pub fn decomposition_identity_check(
    grid: &SpatialGrid,
    z: &[f64],
    eta: &dyn WeightFunction,
    t: f64,
    lambda: f64,
    tau: f64,
) -> Result<DecompositionReport> {
    if z.len() != grid.len() {
        return Err(LabError::ShapeMismatch("z must be one grid slice".into()));
    }
    let gamma_fn = |p: Point| (lambda * eta.eta(p, t)).exp();
    let st = Stencil { f: &gamma_fn, h: [grid.spacing(0), if grid.dim() == 2 { grid.spacing(1) } else { 1.0 }], dim: grid.dim() };
    let n = grid.len();
    let pts: Vec<Point> = grid.points().collect();
    let e: Vec<f64> = pts.iter().map(|&p| (tau * gamma_fn(p)).exp()).collect();
    let w: Vec<f64> = z.iter().zip(&e).map(|(a, b)| a * b).collect();
    let mut lap_z = vec![0.0; n];
    laplacian_into(grid, z, &mut lap_z);
    let mut lap_w = vec![0.0; n];
    laplacian_into(grid, &w, &mut lap_w);
    let gw = gradient(grid, &w);
    let vol = grid.cell_volume();
    let (mut lhs, mut m1n, mut m2n, mut cross) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..n {
        let p = pts[k];
        let gg = st.grad(p);
        let m1 = lap_w[k] + tau * tau * st.grad_sqr(p) * w[k];
        let mut adv = 0.0;
        for a in 0..grid.dim() {
            adv += gg[a] * gw[a][k];
        }
        let m2 = 2.0 * tau * adv + tau * st.lap(p) * w[k];
        let l = e[k] * lap_z[k];
        lhs += vol * l * l;
        m1n += vol * m1 * m1;
        m2n += vol * m2 * m2;
        cross += vol * m1 * m2;
    }
    let scale = lhs.max(m1n).max(m2n).max(2.0 * cross.abs());
    let residual = if scale > 0.0 { (lhs - (m1n + m2n - 2.0 * cross)).abs() / scale } else { 0.0 };
    Ok(DecompositionReport { weighted_laplacian: lhs, m1: m1n, m2: m2n, cross, residual })
}

/// Residuals on successively refined grids and the observed orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementStudy {
    pub nodes: Vec<usize>,
    pub residuals: Vec<f64>,
    /// `log₂(e_k / e_{k+1})` per refinement.
    pub orders: Vec<f64>,
}

impl RefinementStudy {
    fn from(nodes: Vec<usize>, residuals: Vec<f64>) -> Self {
        let orders = residuals.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
        Self { nodes, residuals, orders }
    }

    pub fn min_order(&self) -> f64 {
        self.orders.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Node counts `n, 2n+1, 4n+3, …` halve the spacing each time.
fn refined_counts(n: usize, levels: usize) -> Vec<usize> {
    let mut v = vec![n];
    for _ in 0..levels {
        let last = *v.last().unwrap();
        v.push(2 * last + 1);
    }
    v
}

/// [`decomposition_identity_check`] for `z` sampled on `levels` refinements of a 1D grid.
pub fn decomposition_identity_refinement(
    lower: f64,
    upper: f64,
    n: usize,
    levels: usize,
    z: impl Fn(Point) -> f64,
    eta: &dyn WeightFunction,
    t: f64,
    lambda: f64,
    tau: f64,
) -> Result<RefinementStudy> {
    let nodes = refined_counts(n, levels);
    let residuals = nodes
        .iter()
        .map(|&k| {
            let g = SpatialGrid::new_1d(lower, upper, k)?;
            let zs: Vec<f64> = g.points().map(&z).collect();
            Ok(decomposition_identity_check(&g, &zs, eta, t, lambda, tau)?.residual)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RefinementStudy::from(nodes, residuals))
}

/// Sides of `∫|∇w|² − τ²∫|∇γ|²|w|² = ∫e^{τγ} g̃ w − ∫e^{τγ} G·∇w`,
/// `g̃ = g − τ∇γ·G`, where `w = e^{τγ}z` and `−Δz = g + ∇·G`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyIdentityReport {
    pub gradient: f64,
    pub potential: f64,
    pub source: f64,
    pub flux: f64,
    /// `|lhs − rhs|` over the largest of the four magnitudes.
    pub residual: f64,
}

/// Discrete check of the energy identity for `(g, G)` sampled on a 1D grid;
/// `G` must vanish on ∂Ω.
pub fn energy_identity_check(
    grid: &SpatialGrid,
    g: &dyn Fn(Point) -> f64,
    big_g: &dyn Fn(Point) -> f64,
    eta: &dyn WeightFunction,
    t: f64,
    lambda: f64,
    tau: f64,
) -> Result<EnergyIdentityReport> {
    if grid.dim() != 1 {
        return Err(invalid("the energy identity check is one-dimensional"));
    }
    let gamma_fn = |p: Point| (lambda * eta.eta(p, t)).exp();
    let st = Stencil { f: &gamma_fn, h: [grid.spacing(0), 1.0], dim: 1 };
    let pts: Vec<Point> = grid.points().collect();
    let gs: Vec<f64> = pts.iter().map(|&p| g(p)).collect();
    let bs: Vec<f64> = pts.iter().map(|&p| big_g(p)).collect();
    let z = solve_divergence_problem(grid, &gs, std::slice::from_ref(&bs))?;
    let e: Vec<f64> = pts.iter().map(|&p| (tau * gamma_fn(p)).exp()).collect();
    let w: Vec<f64> = z.iter().zip(&e).map(|(a, b)| a * b).collect();
    let gw = &gradient(grid, &w)[0];
    let vol = grid.cell_volume();
    // Dirichlet energy on cells, ghosts included: `⟨−Δ_h w, w⟩`.
    let h = grid.spacing(0);
    let mut grad = 0.0;
    for k in 0..=grid.len() {
        let right = if k < grid.len() { w[k] } else { 0.0 };
        let left = if k > 0 { w[k - 1] } else { 0.0 };
        grad += h * ((right - left) / h).powi(2);
    }
    let (mut pot, mut src, mut flux) = (0.0, 0.0, 0.0);
    for k in 0..grid.len() {
        let dg = st.grad(pts[k])[0];
        pot += vol * tau * tau * dg * dg * w[k] * w[k];
        let gt = gs[k] - tau * dg * bs[k];
        src += vol * e[k] * gt * w[k];
        flux += vol * e[k] * bs[k] * gw[k];
    }
    let scale = grad.max(pot).max(src.abs()).max(flux.abs());
    let residual = if scale > 0.0 { ((grad - pot) - (src - flux)).abs() / scale } else { 0.0 };
    Ok(EnergyIdentityReport { gradient: grad, potential: pot, source: src, flux, residual })
}

/// [`energy_identity_check`] on `levels` refinements of a 1D grid.
pub fn energy_identity_refinement(
    lower: f64,
    upper: f64,
    n: usize,
    levels: usize,
    g: &dyn Fn(Point) -> f64,
    big_g: &dyn Fn(Point) -> f64,
    eta: &dyn WeightFunction,
    t: f64,
    lambda: f64,
    tau: f64,
) -> Result<RefinementStudy> {
    let nodes = refined_counts(n, levels);
    let residuals = nodes
        .iter()
        .map(|&k| {
            let grid = SpatialGrid::new_1d(lower, upper, k)?;
            Ok(energy_identity_check(&grid, g, big_g, eta, t, lambda, tau)?.residual)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RefinementStudy::from(nodes, residuals))
}

/// Pointwise margins of `Q = 2τ³∇γ·∇|∇γ|² − τΔ²γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaimReport {
    pub lambda: f64,
    pub tau: f64,
    /// `min Q / (τ³γ³)` over nodes off the region.
    pub worst_margin: f64,
    /// `worst_margin / λ⁴`, the largest admissible `A` off the region.
    pub implied_a: f64,
    /// `max |Q| / (τ³λ⁴γ³)` over nodes on the region.
    pub on_region_max: f64,
    /// `on_region_max ≤ 3 / implied_a`.
    pub on_region_ok: bool,
    pub tested_off: usize,
    pub tested_on: usize,
}

impl ClaimReport {
    pub fn holds(&self) -> bool {
        self.worst_margin > 0.0 && self.on_region_ok
    }
}

/// Evaluate `Q` at every interior node and time node, derivatives of
/// `γ = e^{λη}` by nested centered differences (a five-point fourth
/// difference in 1D) at the grid spacing.
pub fn claim_pointwise_check(
    eta: &dyn WeightFunction,
    omega1: &MovingRegion,
    lambda: f64,
    tau: f64,
) -> Result<ClaimReport> {
    if !(tau > 0.0) {
        return Err(invalid("τ must be positive"));
    }
    let grid = *omega1.grid();
    let time = *omega1.time();
    let h = [grid.spacing(0), if grid.dim() == 2 { grid.spacing(1) } else { 1.0 }];
    let per_slice: Vec<(f64, f64, usize, usize)> = (0..time.nodes())
        .into_par_iter()
        .map(|m| {
            let t = time.t(m);
            let gamma_fn = |p: Point| (lambda * eta.eta(p, t)).exp();
            let st = Stencil { f: &gamma_fn, h, dim: grid.dim() };
            let mask = omega1.mask(m);
            let (mut worst, mut on_max, mut off, mut on) = (f64::INFINITY, 0.0f64, 0, 0);
            for k in 0..grid.len() {
                let p = grid.point(k);
                let g = gamma_fn(p);
                let q = 2.0 * tau.powi(3) * st.drift(p) - tau * st.bilap(p);
                let scaled = q / (tau.powi(3) * g.powi(3));
                if !scaled.is_finite() {
                    // γ³ overflowed; the margin is not measurable at this λ.
                    return (f64::NAN, f64::NAN, off, on);
                }
                if mask[k] {
                    on += 1;
                    on_max = on_max.max(scaled.abs() / lambda.powi(4));
                } else {
                    off += 1;
                    worst = worst.min(scaled);
                }
            }
            (worst, on_max, off, on)
        })
        .collect();
    let nan_min = |a: f64, b: f64| if a.is_nan() || b.is_nan() { f64::NAN } else { a.min(b) };
    let nan_max = |a: f64, b: f64| if a.is_nan() || b.is_nan() { f64::NAN } else { a.max(b) };
    let worst = per_slice.iter().map(|v| v.0).fold(f64::INFINITY, nan_min);
    let on_max = per_slice.iter().map(|v| v.1).fold(0.0, nan_max);
    let implied_a = worst / lambda.powi(4);
    Ok(ClaimReport {
        lambda,
        tau,
        worst_margin: worst,
        implied_a,
        on_region_max: on_max,
        on_region_ok: implied_a > 0.0 && on_max <= 3.0 / implied_a,
        tested_off: per_slice.iter().map(|v| v.2).sum(),
        tested_on: per_slice.iter().map(|v| v.3).sum(),
    })
}

/// Smallest `λ` of a sorted scan list for which the claim holds at `τ`.
pub fn claim_lambda_threshold(
    eta: &dyn WeightFunction,
    omega1: &MovingRegion,
    lambdas: &[f64],
    tau: f64,
) -> Result<(Option<f64>, Vec<ClaimReport>)> {
    let reports = lambdas.iter().map(|&l| claim_pointwise_check(eta, omega1, l, tau)).collect::<Result<Vec<_>>>()?;
    let first = reports.iter().find(|r| r.holds()).map(|r| r.lambda);
    Ok((first, reports))
}

/// Random smooth zero-trace field: `Σ_k c_k sin(kπ(x − a)/L)` with
/// `c_k ~ U(−1, 1)/k²`, `k ≤ modes`, along each axis.
pub fn random_sine_field(grid: &SpatialGrid, modes: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dim = grid.dim();
    let coefs: Vec<Vec<f64>> = (0..modes)
        .map(|j| (0..if dim == 2 { modes } else { 1 }).map(|k| rng.gen_range(-1.0..1.0) / (((j + 1) * (k + 1)) as f64).powi(2)).collect())
        .collect();
    let la = grid.upper(0) - grid.lower(0);
    let lb = if dim == 2 { grid.upper(1) - grid.lower(1) } else { 1.0 };
    grid.points()
        .map(|p| {
            let mut v = 0.0;
            for (j, row) in coefs.iter().enumerate() {
                let sx = ((j + 1) as f64 * std::f64::consts::PI * (p[0] - grid.lower(0)) / la).sin();
                for (k, &c) in row.iter().enumerate() {
                    let sy = if dim == 2 {
                        ((k + 1) as f64 * std::f64::consts::PI * (p[1] - grid.lower(1)) / lb).sin()
                    } else {
                        1.0
                    };
                    v += c * sx * sy;
                }
            }
            v
        })
        .collect()
}

/// Random smooth space-time field: `Σ_k a_k(t) sin(kπ(x − a)/L)`, the
/// amplitudes cosine series in time.
pub fn random_space_time_field(grid: &SpatialGrid, time: &TimeGrid, modes: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let spatial: Vec<Vec<f64>> = (0..modes).map(|_| random_sine_field(grid, modes, rng)).collect();
    let temporal: Vec<f64> = (0..modes).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (0..time.nodes())
        .map(|m| {
            let s = time.t(m) / time.horizon();
            let mut v = vec![0.0; grid.len()];
            for (k, (f, &a)) in spatial.iter().zip(&temporal).enumerate() {
                let c = a * (k as f64 * std::f64::consts::PI * s).cos() / (1 + k) as f64;
                for (o, x) in v.iter_mut().zip(f) {
                    *o += c * x;
                }
            }
            v
        })
        .collect()
}

/// The inequality a suite exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inequality {
    Ode,
    Elliptic,
    H1,
    GlobalBzk,
    GlobalBbm,
}

impl Inequality {
    pub const ALL: [Inequality; 5] =
        [Inequality::Ode, Inequality::Elliptic, Inequality::H1, Inequality::GlobalBzk, Inequality::GlobalBbm];

    pub fn name(&self) -> &'static str {
        match self {
            Inequality::Ode => "ode",
            Inequality::Elliptic => "elliptic",
            Inequality::H1 => "h1",
            Inequality::GlobalBzk => "global_bzk",
            Inequality::GlobalBbm => "global_bbm",
        }
    }

    /// Whether the doubled parameter is `τ` (else `s`).
    pub fn uses_tau(&self) -> bool {
        matches!(self, Inequality::Elliptic | Inequality::H1)
    }
}

/// Max ratios over a random suite at a parameter and at twice it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub inequality: Inequality,
    pub parameter: f64,
    pub samples: usize,
    pub ratios: Vec<f64>,
    pub ratios_doubled: Vec<f64>,
    /// Full sides per sample at the base and at the doubled parameter.
    pub sides: Vec<CarlemanSides>,
    pub sides_doubled: Vec<CarlemanSides>,
    pub max_ratio: f64,
    pub max_ratio_doubled: f64,
}

impl SuiteResult {
    /// `max_ratio_doubled ≤ factor · max_ratio`.
    pub fn stable(&self, factor: f64) -> bool {
        self.max_ratio.is_finite() && self.max_ratio_doubled <= factor * self.max_ratio
    }
}

/// Inputs shared by the suites.
#[derive(Debug, Clone)]
pub struct SuiteSetup {
    pub weights: WeightSet,
    /// `O_{ω₂}` for the local estimates, `O_ω` for the global ones.
    pub omega2: MovingRegion,
    pub omega: MovingRegion,
    pub bzk: Evolution,
    pub bbm: Evolution,
    /// Time slice of the elliptic estimates.
    pub slice: usize,
    pub s0: f64,
    pub tau0: f64,
    pub modes: usize,
    pub samples: usize,
    pub seed: u64,
}

impl SuiteSetup {
    /// The standard 1D sweep on `(0, 1)` with `T = 1`: certified `η`,
    /// `ω₁ = ω₀ + 0.03`, `ω₂ = ω₀ + 0.06`, `ω = ω₀ + 0.09`, BBM with `A ≡ 1`.
    pub fn standard_sweep(n: usize, steps: usize, lambda: f64, s0: f64, tau0: f64, seed: u64) -> Result<Self> {
        let sweep = Sweep1d::standard(1.0);
        let grid = SpatialGrid::new_1d(0.0, 1.0, n)?;
        let time = TimeGrid::new(1.0, steps)?;
        let dt_flow = 1e-3;
        let (_, field, _) = build_eta_sweep_1d(&sweep, 0.03, &grid, &time, 0.15, dt_flow)?;
        let weights = assemble_weights(&field, 0.15, lambda, s0)?;
        let flow = sweep.flow(dt_flow)?;
        let omega2 = rasterize_region(&flow, sweep.omega0().dilate(0.06), &grid, &time)?;
        let omega = rasterize_region(&flow, sweep.omega0().dilate(0.09), &grid, &time)?;
        Ok(Self {
            weights,
            omega2,
            omega,
            bzk: Evolution::bzk(grid, time)?,
            bbm: Evolution::bbm(grid, time, BbmCoefficients::constant(grid, time, [1.0, 0.0]))?,
            slice: steps / 2,
            s0,
            tau0,
            modes: 6,
            samples: 20,
            seed,
        })
    }
}

fn max_finite(v: &[f64]) -> f64 {
    v.iter().copied().filter(|x| !x.is_nan()).fold(f64::NEG_INFINITY, f64::max)
}

/// Run one suite: `samples` random test functions, each evaluated at the
/// base parameter and at twice it; members run concurrently.
pub fn run_suite(setup: &SuiteSetup, which: Inequality) -> Result<SuiteResult> {
    let grid = *setup.weights.eta.grid();
    let time = *setup.weights.eta.time();
    let base = if which.uses_tau() { setup.tau0 } else { setup.s0 };
    let w1 = setup.weights.with_s(setup.s0);
    let w2 = setup.weights.with_s(2.0 * setup.s0);
    let pairs: Vec<(CarlemanSides, CarlemanSides)> = (0..setup.samples)
        .into_par_iter()
        .map(|i| {
            let rng = ChaCha8Rng::seed_from_u64(setup.seed.wrapping_add(1000 * which as u64 + i as u64));
            let eval = |param_double: bool| -> Result<CarlemanSides> {
                let tau = if param_double { 2.0 * setup.tau0 } else { setup.tau0 };
                let w = if param_double { &w2 } else { &w1 };
                Ok(match which {
                    Inequality::Ode => {
                        let q = random_space_time_field(&grid, &time, setup.modes, &mut rng.clone());
                        eval_ode_carleman(&q, w, &setup.omega2)?
                    }
                    Inequality::Elliptic => {
                        let z = random_sine_field(&grid, setup.modes, &mut rng.clone());
                        eval_elliptic_carleman(&z, setup.slice, &setup.weights, tau, &setup.omega2)?
                    }
                    Inequality::H1 => {
                        let mut r = rng.clone();
                        let g = random_sine_field(&grid, setup.modes, &mut r);
                        let big: Vec<Vec<f64>> = (0..grid.dim()).map(|_| random_sine_field(&grid, setup.modes, &mut r)).collect();
                        eval_h1_carleman(&g, &big, setup.slice, &setup.weights, tau, &setup.omega2)?
                    }
                    Inequality::GlobalBzk | Inequality::GlobalBbm => {
                        let psi = random_sine_field(&grid, setup.modes, &mut rng.clone());
                        let ev = if which == Inequality::GlobalBzk { &setup.bzk } else { &setup.bbm };
                        eval_global_carleman(ev, &psi, w, &setup.omega)?
                    }
                })
            };
            let a = eval(false)?;
            let b = eval(true)?;
            Ok((a, b))
        })
        .collect::<Result<_>>()?;
    let ratios: Vec<f64> = pairs.iter().map(|p| p.0.ratio).collect();
    let ratios_doubled: Vec<f64> = pairs.iter().map(|p| p.1.ratio).collect();
    let (sides, sides_doubled): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok(SuiteResult {
        inequality: which,
        parameter: base,
        samples: setup.samples,
        max_ratio: max_finite(&ratios),
        max_ratio_doubled: max_finite(&ratios_doubled),
        ratios,
        ratios_doubled,
        sides,
        sides_doubled,
    })
}

/// Refinement study of the elliptic ratio for the first Dirichlet mode:
/// returns `(nodes, ratios)`; `η` is resampled on each grid.
pub fn elliptic_mode_refinement(
    eta: &dyn WeightFunction,
    region_of: &dyn Fn(&SpatialGrid, &TimeGrid) -> Result<MovingRegion>,
    time: &TimeGrid,
    slice: usize,
    n: usize,
    levels: usize,
    lambda: f64,
    tau: f64,
    tau_margin: f64,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let nodes = refined_counts(n, levels);
    let ratios = nodes
        .iter()
        .map(|&k| {
            let grid = SpatialGrid::new_1d(0.0, 1.0, k)?;
            let sampled = crate::weights::sample_eta(eta, &grid, time);
            let w = assemble_weights(&sampled, tau_margin, lambda, 1.0)?;
            let region = region_of(&grid, time)?;
            let z: Vec<f64> = grid.points().map(|p| (std::f64::consts::PI * p[0]).sin()).collect();
            Ok(eval_elliptic_carleman(&z, slice, &w, tau, &region)?.ratio)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((nodes, ratios))
}

/// Fitted order of a refinement study as a log-log slope against spacing.
pub fn fitted_order(study: &RefinementStudy) -> Result<f64> {
    let h: Vec<f64> = study.nodes.iter().map(|&n| 1.0 / (n + 1) as f64).collect();
    loglog_slope(&h, &study.residuals)
}
