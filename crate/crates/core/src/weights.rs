//! The weight η, the time profile r and the Carleman weights built on them.
//!
//! `γ = e^{λη}`, `α = r (e^{2λ η̂} − γ)`, `ξ = r γ` with `η̂ = 1.05 ‖η‖∞` the
//! inflated grid sup. `r` is infinite at `t = 0` and `t = T`; weights that
//! carry `e^{−sα}` vanish there and consumers must treat those slices as such.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::flow::{rasterize_region, FlowMap, MovingRegion, RegionShape, Sweep1d};
use crate::grid::{Point, SpaceTimeField, SpatialGrid, TimeGrid};

/// Safety factor applied to `‖η‖∞` where it enters exponents.
pub const ETA_INFLATION: f64 = 1.05;

/// Quintic Hermite interpolant on `[0, 1]` from value, slope and curvature at
/// both ends (slopes and curvatures already scaled to the unit interval).
fn quintic_hermite(s: f64, p0: f64, v0: f64, a0: f64, p1: f64, v1: f64, a1: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    let s5 = s4 * s;
    let h0 = 1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5;
    let h1 = s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5;
    let h2 = 0.5 * (s2 - 3.0 * s3 + 3.0 * s4 - s5);
    let h3 = 10.0 * s3 - 15.0 * s4 + 6.0 * s5;
    let h4 = -4.0 * s3 + 7.0 * s4 - 3.0 * s5;
    let h5 = 0.5 * (s3 - 2.0 * s4 + s5);
    p0 * h0 + v0 * h1 + a0 * h2 + p1 * h3 + v1 * h4 + a1 * h5
}

/// Time profile `r`: `1/t` up to `τ/2`, a strictly decreasing quintic bridge
/// on `(τ/2, τ)`, `1` on `[τ, T/2]`, mirrored about `T/2`.
pub fn r_profile(t: f64, tau: f64, horizon: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0f64.min(0.5 * horizon)) {
        return Err(invalid(format!("time margin {tau} must lie in (0, min(1, T/2))")));
    }
    if !(t > 0.0 && t < horizon) {
        return Err(invalid(format!("r is defined on (0, T); got t = {t}")));
    }
    let u = t.min(horizon - t);
    let a = 0.5 * tau;
    Ok(if u <= a {
        1.0 / u
    } else if u >= tau {
        1.0
    } else {
        let h = tau - a;
        let s = (u - a) / h;
        quintic_hermite(s, 1.0 / a, -h / (a * a), 2.0 * h * h / (a * a * a), 1.0, 0.0, 0.0)
    })
}

/// `r` on every node of a time grid; the two endpoint values are `+∞`.
pub fn r_nodes(time: &TimeGrid, tau: f64) -> Result<Vec<f64>> {
    (0..time.nodes())
        .map(|m| {
            if m == 0 || m == time.steps() {
                Ok(f64::INFINITY)
            } else {
                r_profile(time.t(m), tau, time.horizon())
            }
        })
        .collect()
}

/// A weight profile `η(x, t)` that can be evaluated off the grid.
pub trait WeightFunction: Send + Sync {
    fn eta(&self, x: Point, t: f64) -> f64;
}

impl<F> WeightFunction for F
where
    F: Fn(Point, f64) -> f64 + Send + Sync,
{
    fn eta(&self, x: Point, t: f64) -> f64 {
        self(x, t)
    }
}

/// η for the standard 1D sweep:
/// `η = base − b (√(1 + u²) − 1)`, `u = (x − p(t)) / L`,
/// with the peak `p(t)` moving from `inset` to `1 − inset` over `[0, T]`.
///
/// `η_x` vanishes only at `x = p(t)`, which stays within `inset` of the
/// sweep centre, and `η_t = −p′ η_x` is positive right of the peak and
/// negative left of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaSweep1d {
    pub horizon: f64,
    pub inset: f64,
    pub length: f64,
    pub amplitude: f64,
    pub base: f64,
}

impl EtaSweep1d {
    /// Parameters for a sweep: peak inset a third of the half-width, profile
    /// length 0.1, amplitude such that `η` spans at most `span` below its peak.
    pub fn for_sweep(sweep: &Sweep1d, span: f64) -> Self {
        let length: f64 = 0.1;
        let umax = 1.0 / length;
        let amplitude = span / ((1.0 + umax * umax).sqrt() - 1.0);
        Self { horizon: sweep.horizon, inset: sweep.halfwidth / 3.0, length, amplitude, base: 1.0 }
    }

    pub fn peak(&self, t: f64) -> f64 {
        self.inset + (1.0 - 2.0 * self.inset) * t / self.horizon
    }

    /// `(η, η_x, η_t)` in closed form.
    pub fn eval_with_derivatives(&self, x: f64, t: f64) -> (f64, f64, f64) {
        let u = (x - self.peak(t)) / self.length;
        let q = (1.0 + u * u).sqrt();
        let eta = self.base - self.amplitude * (q - 1.0);
        let eta_x = -self.amplitude * u / (q * self.length);
        let eta_t = -(1.0 - 2.0 * self.inset) / self.horizon * eta_x;
        (eta, eta_x, eta_t)
    }

    /// Spatial derivatives `∂ₓᵏ η`, `k = 0..=4`, in closed form.
    pub fn spatial_derivatives(&self, x: f64, t: f64) -> [f64; 5] {
        let l = self.length;
        let b = self.amplitude;
        let u = (x - self.peak(t)) / l;
        let q2 = 1.0 + u * u;
        let q = q2.sqrt();
        // d^k/du^k of √(1+u²)
        let d1 = u / q;
        let d2 = 1.0 / (q2 * q);
        let d3 = -3.0 * u / (q2 * q2 * q);
        let d4 = (12.0 * u * u - 3.0) / (q2 * q2 * q2 * q);
        [
            self.base - b * (q - 1.0),
            -b * d1 / l,
            -b * d2 / (l * l),
            -b * d3 / (l * l * l),
            -b * d4 / (l * l * l * l),
        ]
    }
}

impl WeightFunction for EtaSweep1d {
    fn eta(&self, x: Point, t: f64) -> f64 {
        self.eval_with_derivatives(x[0], t).0
    }
}

/// Sample a weight function on the space-time grid.
pub fn sample_eta(eta: &dyn WeightFunction, grid: &SpatialGrid, time: &TimeGrid) -> SpaceTimeField<f64> {
    SpaceTimeField::from_fn(*grid, *time, |p, t| eta.eta(p, t))
}

/// Sampled Carleman weights.
#[derive(Debug, Clone)]
pub struct WeightSet {
    pub eta: SpaceTimeField<f64>,
    pub tau_margin: f64,
    pub r: Vec<f64>,
    pub lambda: f64,
    pub s: f64,
    /// Grid sup of `|η|`.
    pub eta_sup: f64,
    /// `ETA_INFLATION · eta_sup`, the value used in exponents.
    pub eta_cap: f64,
    pub gamma: SpaceTimeField<f64>,
    pub alpha: SpaceTimeField<f64>,
    pub xi: SpaceTimeField<f64>,
    pub alpha_star: Vec<f64>,
    pub xi_star: Vec<f64>,
}

impl WeightSet {
    /// Whether slice `m` is one of the two singular endpoints of `r`.
    pub fn is_singular(&self, m: usize) -> bool {
        !self.r[m].is_finite()
    }

    /// `e^{2λη̂} − γ` at node `k` of slice `m`, so that `α = r · rho`.
    #[inline]
    pub fn rho(&self, m: usize, k: usize) -> f64 {
        (2.0 * self.lambda * self.eta_cap).exp() - self.gamma.slice(m)[k]
    }

    /// A copy with a different `s`.
    pub fn with_s(&self, s: f64) -> Self {
        Self { s, ..self.clone() }
    }
}

/// Evaluate `γ, α, ξ, α*, ξ*` from a sampled `η`.
pub fn assemble_weights(eta: &SpaceTimeField<f64>, tau: f64, lambda: f64, s: f64) -> Result<WeightSet> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(invalid("λ must be finite and non-negative"));
    }
    if !(s > 0.0) || !s.is_finite() {
        return Err(invalid("s must be positive"));
    }
    let time = *eta.time();
    let r = r_nodes(&time, tau)?;
    let eta_sup = eta.max_abs();
    let eta_cap = ETA_INFLATION * eta_sup;
    let top = (2.0 * lambda * eta_cap).exp();
    let gamma = eta.map(|v| (lambda * v).exp());
    let n = eta.grid().len();
    let mut alpha = SpaceTimeField::zeros(*eta.grid(), time);
    let mut xi = SpaceTimeField::zeros(*eta.grid(), time);
    let mut alpha_star = vec![0.0; time.nodes()];
    let mut xi_star = vec![0.0; time.nodes()];
    for m in 0..time.nodes() {
        let g = gamma.slice(m);
        let rm = r[m];
        let a = alpha.slice_mut(m);
        for k in 0..n {
            a[k] = rm * (top - g[k]);
        }
        alpha_star[m] = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let x = xi.slice_mut(m);
        for k in 0..n {
            x[k] = rm * g[k];
        }
        xi_star[m] = x.iter().copied().fold(f64::INFINITY, f64::min);
    }
    Ok(WeightSet {
        eta: eta.clone(),
        tau_margin: tau,
        r,
        lambda,
        s,
        eta_sup,
        eta_cap,
        gamma,
        alpha,
        xi,
        alpha_star,
        xi_star,
    })
}

/// Signed margins: a property holds iff its margin is `> 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightPropertyReport {
    /// `min |∇η|` off the region.
    pub p1_margin: f64,
    /// `min |η_t|` off the region.
    pub p2_margin: f64,
    /// `min η_t` off the region for `t ≤ τ`.
    pub p3_margin: f64,
    /// `min (−η_t)` off the region for `t ≥ T − τ`.
    pub p4_margin: f64,
    /// `min (−∂η/∂ν)` on ∂Ω.
    pub p5_margin: f64,
    /// `min η − (3/4) ‖η‖∞` on the closed grid.
    pub p6_margin: f64,
    pub tested_nodes: usize,
}

impl WeightPropertyReport {
    pub fn passes(&self) -> [bool; 6] {
        [
            self.p1_margin > 0.0,
            self.p2_margin > 0.0,
            self.p3_margin > 0.0,
            self.p4_margin > 0.0,
            self.p5_margin > 0.0,
            self.p6_margin > 0.0,
        ]
    }

    pub fn all_pass(&self) -> bool {
        self.passes().iter().all(|&b| b)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        const NAMES: [&str; 6] = ["P1", "P2", "P3", "P4", "P5", "P6"];
        self.passes().iter().zip(NAMES).filter(|(ok, _)| !**ok).map(|(_, n)| n).collect()
    }
}

/// Certify `η` pointwise.
///
/// Derivatives are centered differences of `η` with the grid spacing in
/// space and the time step in time (one-sided at `t = 0, T`); the normal
/// derivative on ∂Ω uses the ghost layer one cell outside. The test set of
/// (P1)–(P4) is the complement of the rasterized `X(ω₁, t, 0)`.
pub fn check_weight_properties(
    eta: &dyn WeightFunction,
    flow: &FlowMap,
    omega1: RegionShape,
    grid: &SpatialGrid,
    time: &TimeGrid,
    tau: f64,
) -> Result<WeightPropertyReport> {
    let region = rasterize_region(flow, omega1, grid, time)?;
    Ok(check_weight_properties_on(eta, &region, tau))
}

/// As [`check_weight_properties`] with a pre-rasterized `X(ω₁, t, 0)`.
pub fn check_weight_properties_on(eta: &dyn WeightFunction, omega1: &MovingRegion, tau: f64) -> WeightPropertyReport {
    let grid = *omega1.grid();
    let time = *omega1.time();
    let horizon = time.horizon();
    let dt = time.dt();
    let dim = grid.dim();

    let mut p1 = f64::INFINITY;
    let mut p2 = f64::INFINITY;
    let mut p3 = f64::INFINITY;
    let mut p4 = f64::INFINITY;
    let mut p5 = f64::INFINITY;
    let mut tested = 0;

    let eta_t = |p: Point, m: usize| -> f64 {
        let t = time.t(m);
        if m == 0 {
            (eta.eta(p, t + dt) - eta.eta(p, t)) / dt
        } else if m == time.steps() {
            (eta.eta(p, t) - eta.eta(p, t - dt)) / dt
        } else {
            (eta.eta(p, t + dt) - eta.eta(p, t - dt)) / (2.0 * dt)
        }
    };

    // P6 runs over the closure: interior nodes and boundary points.
    let mut samples: Vec<(Point, usize)> = Vec::new();
    for m in 0..time.nodes() {
        let t = time.t(m);
        let mask = omega1.mask(m);
        for k in 0..grid.len() {
            let p = grid.point(k);
            samples.push((p, m));
            if mask[k] {
                continue;
            }
            tested += 1;
            let mut g2 = 0.0;
            for a in 0..dim {
                let h = grid.spacing(a);
                let mut pp = p;
                let mut pm = p;
                pp[a] += h;
                pm[a] -= h;
                let d = (eta.eta(pp, t) - eta.eta(pm, t)) / (2.0 * h);
                g2 += d * d;
            }
            p1 = p1.min(g2.sqrt());
            let et = eta_t(p, m);
            p2 = p2.min(et.abs());
            if t <= tau + 1e-12 {
                p3 = p3.min(et);
            }
            if t >= horizon - tau - 1e-12 {
                p4 = p4.min(-et);
            }
        }
        for a in 0..dim {
            let h = grid.spacing(a);
            let other = 1 - a;
            let count = if dim == 1 { 1 } else { grid.n(other) };
            for side in 0..2 {
                for j in 0..count {
                    let mut b = [0.0; 2];
                    b[a] = if side == 0 { grid.lower(a) } else { grid.upper(a) };
                    if dim == 2 {
                        b[other] = grid.coordinate(other, j as isize);
                    }
                    let mut pp = b;
                    let mut pm = b;
                    pp[a] += h;
                    pm[a] -= h;
                    let d = (eta.eta(pp, t) - eta.eta(pm, t)) / (2.0 * h);
                    let normal = if side == 0 { -d } else { d };
                    p5 = p5.min(-normal);
                    samples.push((b, m));
                }
            }
        }
    }
    let values: Vec<f64> = samples.iter().map(|&(p, m)| eta.eta(p, time.t(m))).collect();
    let sup = values.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let p6 = min - 0.75 * sup;

    WeightPropertyReport {
        p1_margin: p1,
        p2_margin: p2,
        p3_margin: p3,
        p4_margin: p4,
        p5_margin: p5,
        p6_margin: p6,
        tested_nodes: tested,
    }
}

/// Build and certify η for the 1D sweep; errors name the failing properties.
pub fn build_eta_sweep_1d(
    sweep: &Sweep1d,
    omega1_margin: f64,
    grid: &SpatialGrid,
    time: &TimeGrid,
    tau: f64,
    dt_flow: f64,
) -> Result<(EtaSweep1d, SpaceTimeField<f64>, WeightPropertyReport)> {
    if grid.dim() != 1 {
        return Err(invalid("the sweep weight is one-dimensional"));
    }
    if omega1_margin <= 0.0 {
        return Err(invalid("ω₁ must strictly contain ω₀"));
    }
    let eta = EtaSweep1d::for_sweep(sweep, 0.2);
    let flow = sweep.flow(dt_flow)?;
    let report = check_weight_properties(&eta, &flow, sweep.omega0().dilate(omega1_margin), grid, time, tau)?;
    if !report.all_pass() {
        return Err(LabError::CertificationFailed(format!(
            "{} fail: {report:?}",
            report.failures().join(", ")
        )));
    }
    Ok((eta, sample_eta(&eta, grid, time), report))
}
