//! Flow maps of velocity fields, moving control regions and the geometric
//! checks on them.
//!
//! `X(x, t, t0)` is the position at time `t` of the particle that sits at `x`
//! at time `t0`. The moving region is `O(t) = X(ω, t, 0) ∩ Ω`; membership of
//! a node is decided by flowing it back to time 0.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::grid::{Point, SpaceTimeField, SpatialGrid, TimeGrid};

/// A velocity field `F(x, t)` on R^N.
pub trait VelocityField: Send + Sync {
    fn eval(&self, x: Point, t: f64) -> Point;
}

impl<F> VelocityField for F
where
    F: Fn(Point, f64) -> Point + Send + Sync,
{
    fn eval(&self, x: Point, t: f64) -> Point {
        self(x, t)
    }
}

/// Velocity fields that can be written in a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum VelocitySpec {
    Zero,
    /// `F ≡ c`.
    Constant { c: [f64; 2] },
    /// `F(x) = M x`.
    Linear { m: [[f64; 2]; 2] },
    /// Rigid rotation `F = rate · (−(x₂ − c₂), x₁ − c₁)`.
    Rotation { center: [f64; 2], rate: f64 },
}

impl VelocityField for VelocitySpec {
    fn eval(&self, x: Point, _t: f64) -> Point {
        match *self {
            VelocitySpec::Zero => [0.0, 0.0],
            VelocitySpec::Constant { c } => c,
            VelocitySpec::Linear { m } => {
                [m[0][0] * x[0] + m[0][1] * x[1], m[1][0] * x[0] + m[1][1] * x[1]]
            }
            VelocitySpec::Rotation { center, rate } => {
                [-rate * (x[1] - center[1]), rate * (x[0] - center[0])]
            }
        }
    }
}

/// One-step RK4 integrator of `∂X/∂t = F(X, t)`.
#[derive(Clone)]
pub struct FlowMap {
    velocity: Arc<dyn VelocityField>,
    dt_flow: f64,
    dim: usize,
    bounding_box: Option<(Point, Point)>,
}

impl fmt::Debug for FlowMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FlowMap")
            .field("dt_flow", &self.dt_flow)
            .field("dim", &self.dim)
            .field("bounding_box", &self.bounding_box)
            .finish_non_exhaustive()
    }
}

impl FlowMap {
    pub fn new(velocity: impl VelocityField + 'static, dim: usize, dt_flow: f64) -> Result<Self> {
        if !(dt_flow > 0.0) || !dt_flow.is_finite() {
            return Err(invalid("flow step must be positive"));
        }
        if dim != 1 && dim != 2 {
            return Err(invalid("flow dimension must be 1 or 2"));
        }
        Ok(Self { velocity: Arc::new(velocity), dt_flow, dim, bounding_box: None })
    }

    /// Report `TrajectoryEscaped` whenever a trajectory leaves `[lo, hi]`.
    pub fn with_bounding_box(mut self, lo: Point, hi: Point) -> Self {
        self.bounding_box = Some((lo, hi));
        self
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn dt_flow(&self) -> f64 {
        self.dt_flow
    }

    pub fn velocity(&self, x: Point, t: f64) -> Point {
        let mut v = self.velocity.eval(x, t);
        if self.dim == 1 {
            v[1] = 0.0;
        }
        v
    }

    fn escaped(&self, x: Point) -> bool {
        match self.bounding_box {
            None => false,
            Some((lo, hi)) => (0..self.dim).any(|a| x[a] < lo[a] || x[a] > hi[a]),
        }
    }

    /// `X(x, t1, t0)`: start at `x` at time `t0`, return the position at `t1`.
    pub fn integrate(&self, x: Point, t0: f64, t1: f64) -> Result<Point> {
        if t0 == t1 {
            return Ok(x);
        }
        let steps = ((t1 - t0).abs() / self.dt_flow).ceil().max(1.0) as usize;
        let h = (t1 - t0) / steps as f64;
        let mut p = x;
        let add = |a: Point, b: Point, s: f64| [a[0] + s * b[0], a[1] + s * b[1]];
        for k in 0..steps {
            let t = t0 + k as f64 * h;
            let k1 = self.velocity(p, t);
            let k2 = self.velocity(add(p, k1, 0.5 * h), t + 0.5 * h);
            let k3 = self.velocity(add(p, k2, 0.5 * h), t + 0.5 * h);
            let k4 = self.velocity(add(p, k3, h), t + h);
            for a in 0..2 {
                p[a] += h / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
            }
            if self.escaped(p) {
                return Err(LabError::TrajectoryEscaped { t: t + h, point: p });
            }
        }
        Ok(p)
    }

    /// Sampled Lipschitz constant of `F` in space over the grid nodes and
    /// time nodes, from neighbouring differences.
    pub fn lipschitz_estimate(&self, grid: &SpatialGrid, time: &TimeGrid) -> f64 {
        let mut best: f64 = 0.0;
        for m in 0..time.nodes() {
            let t = time.t(m);
            for k in 0..grid.len() {
                let p = grid.point(k);
                let fp = self.velocity(p, t);
                for q in grid.neighbours(k) {
                    let pq = grid.point(q);
                    let fq = self.velocity(pq, t);
                    let dx = ((p[0] - pq[0]).powi(2) + (p[1] - pq[1]).powi(2)).sqrt();
                    let df = ((fp[0] - fq[0]).powi(2) + (fp[1] - fq[1]).powi(2)).sqrt();
                    best = best.max(df / dx);
                }
            }
        }
        best
    }

    /// Sampled sup of `|F|` over grid and time nodes, also checking finiteness.
    pub fn sampled_bound(&self, grid: &SpatialGrid, time: &TimeGrid) -> Result<f64> {
        let mut best: f64 = 0.0;
        for m in 0..time.nodes() {
            for p in grid.points() {
                let v = self.velocity(p, time.t(m));
                let s = (v[0] * v[0] + v[1] * v[1]).sqrt();
                if !s.is_finite() {
                    return Err(invalid(format!("velocity not finite at {p:?}")));
                }
                best = best.max(s);
            }
        }
        Ok(best)
    }
}

/// Reference sets `ω`: open intervals, boxes and balls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "shape")]
pub enum RegionShape {
    Interval { lo: f64, hi: f64 },
    Box { lower: [f64; 2], upper: [f64; 2] },
    Ball { center: [f64; 2], radius: f64 },
}

impl RegionShape {
    /// Open-set membership; only the first `dim` coordinates are used.
    pub fn contains(&self, p: Point, dim: usize) -> bool {
        match *self {
            RegionShape::Interval { lo, hi } => p[0] > lo && p[0] < hi,
            RegionShape::Box { lower, upper } => (0..dim).all(|a| p[a] > lower[a] && p[a] < upper[a]),
            RegionShape::Ball { center, radius } => {
                let d2: f64 = (0..dim).map(|a| (p[a] - center[a]).powi(2)).sum();
                d2 < radius * radius
            }
        }
    }

    /// The set enlarged by `margin` in every direction (shrunk if negative).
    pub fn dilate(&self, margin: f64) -> Self {
        match *self {
            RegionShape::Interval { lo, hi } => RegionShape::Interval { lo: lo - margin, hi: hi + margin },
            RegionShape::Box { lower, upper } => RegionShape::Box {
                lower: [lower[0] - margin, lower[1] - margin],
                upper: [upper[0] + margin, upper[1] + margin],
            },
            RegionShape::Ball { center, radius } => RegionShape::Ball { center, radius: radius + margin },
        }
    }

    /// Distance from `p` to the closure of the set (0 on it).
    pub fn distance(&self, p: Point, dim: usize) -> f64 {
        let gap = |x: f64, lo: f64, hi: f64| (lo - x).max(x - hi).max(0.0);
        match *self {
            RegionShape::Interval { lo, hi } => gap(p[0], lo, hi),
            RegionShape::Box { lower, upper } => {
                (0..dim).map(|a| gap(p[a], lower[a], upper[a]).powi(2)).sum::<f64>().sqrt()
            }
            RegionShape::Ball { center, radius } => {
                let d: f64 = (0..dim).map(|a| (p[a] - center[a]).powi(2)).sum::<f64>().sqrt();
                (d - radius).max(0.0)
            }
        }
    }

    /// Distance from `p` to the complement of the set (0 outside).
    pub fn depth(&self, p: Point, dim: usize) -> f64 {
        match *self {
            RegionShape::Interval { lo, hi } => (p[0] - lo).min(hi - p[0]).max(0.0),
            RegionShape::Box { lower, upper } => (0..dim)
                .map(|a| (p[a] - lower[a]).min(upper[a] - p[a]))
                .fold(f64::INFINITY, f64::min)
                .max(0.0),
            RegionShape::Ball { center, radius } => {
                let d: f64 = (0..dim).map(|a| (p[a] - center[a]).powi(2)).sum::<f64>().sqrt();
                (radius - d).max(0.0)
            }
        }
    }
}

/// Rasterized time sections `O(t_m)` of a moving region.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingRegion {
    reference: RegionShape,
    grid: SpatialGrid,
    time: TimeGrid,
    masks: Vec<Vec<bool>>,
}

impl MovingRegion {
    /// A region that does not move: every slice is `ω ∩ Ω`.
    pub fn fixed(reference: RegionShape, grid: SpatialGrid, time: TimeGrid) -> Self {
        let mask: Vec<bool> = grid.points().map(|p| reference.contains(p, grid.dim())).collect();
        Self { reference, grid, time, masks: vec![mask; time.nodes()] }
    }

    pub fn from_masks(
        reference: RegionShape,
        grid: SpatialGrid,
        time: TimeGrid,
        masks: Vec<Vec<bool>>,
    ) -> Result<Self> {
        if masks.len() != time.nodes() || masks.iter().any(|m| m.len() != grid.len()) {
            return Err(LabError::ShapeMismatch("mask array does not match the grids".into()));
        }
        Ok(Self { reference, grid, time, masks })
    }

    #[inline]
    pub fn reference(&self) -> &RegionShape {
        &self.reference
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
    pub fn mask(&self, m: usize) -> &[bool] {
        &self.masks[m]
    }

    #[inline]
    pub fn masks(&self) -> &[Vec<bool>] {
        &self.masks
    }

    /// Complement masks `Ω ∖ O(t_m)`.
    pub fn complement(&self) -> Vec<Vec<bool>> {
        self.masks.iter().map(|m| m.iter().map(|&b| !b).collect()).collect()
    }

    /// Number of marked nodes at slice `m`.
    pub fn count(&self, m: usize) -> usize {
        self.masks[m].iter().filter(|&&b| b).count()
    }
}

/// Mark node `x` at `t_m` iff `X(x, 0, t_m) ∈ ω`.
pub fn rasterize_region(
    flow: &FlowMap,
    reference: RegionShape,
    grid: &SpatialGrid,
    time: &TimeGrid,
) -> Result<MovingRegion> {
    let dim = grid.dim();
    let masks = (0..time.nodes())
        .into_par_iter()
        .map(|m| {
            let t = time.t(m);
            (0..grid.len())
                .map(|k| Ok(reference.contains(flow.integrate(grid.point(k), t, 0.0)?, dim)))
                .collect::<Result<Vec<bool>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MovingRegion { reference, grid: *grid, time: *time, masks })
}

/// `6s⁵ − 15s⁴ + 10s³` on `[0, 1]`, clamped outside: C², monotone.
pub fn smoothstep5(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
    }
}

/// Smooth indicator of a moving region.
///
/// On each slice a marked node at depth `d` gets `smoothstep5(d / ρ)`, where
/// the depth is the distance to the nearest unmarked interior node less half
/// a cell. Unmarked nodes get 0, so `χ > 0` only on the mask itself.
pub fn smooth_indicator(region: &MovingRegion, rho: f64) -> Result<SpaceTimeField<f64>> {
    let grid = region.grid;
    let hmax = grid.max_spacing();
    if !(rho >= 2.0 * hmax) {
        return Err(invalid(format!("mollification radius {rho} below twice the spacing {hmax}")));
    }
    let reach: Vec<isize> =
        (0..2).map(|a| if a < grid.dim() { (rho / grid.spacing(a)).ceil() as isize + 1 } else { 0 }).collect();
    let half = 0.5 * grid.min_spacing();
    let slices: Vec<Vec<f64>> = region
        .masks
        .par_iter()
        .map(|mask| {
            (0..grid.len())
                .map(|k| {
                    if !mask[k] {
                        return 0.0;
                    }
                    let (i, j) = grid.coords(k);
                    let p = grid.point(k);
                    let mut nearest = f64::INFINITY;
                    for dj in -reach[1]..=reach[1] {
                        let jj = j as isize + dj;
                        if jj < 0 || jj >= grid.n(1) as isize {
                            continue;
                        }
                        for di in -reach[0]..=reach[0] {
                            let ii = i as isize + di;
                            if ii < 0 || ii >= grid.n(0) as isize {
                                continue;
                            }
                            let q = grid.index(ii as usize, jj as usize);
                            if mask[q] {
                                continue;
                            }
                            let pq = grid.point(q);
                            let d = ((p[0] - pq[0]).powi(2) + (p[1] - pq[1]).powi(2)).sqrt();
                            nearest = nearest.min(d);
                        }
                    }
                    smoothstep5((nearest - half) / rho)
                })
                .collect()
        })
        .collect();
    SpaceTimeField::from_slices(grid, region.time, slices)
}

/// Label the connected components (grid 4-neighbourhood) of the marked nodes.
pub fn components(grid: &SpatialGrid, set: &[bool]) -> (usize, Vec<Option<usize>>) {
    let mut label = vec![None; grid.len()];
    let mut count = 0;
    let mut queue = VecDeque::new();
    for start in 0..grid.len() {
        if !set[start] || label[start].is_some() {
            continue;
        }
        label[start] = Some(count);
        queue.push_back(start);
        while let Some(k) = queue.pop_front() {
            for q in grid.neighbours(k) {
                if set[q] && label[q].is_none() {
                    label[q] = Some(count);
                    queue.push_back(q);
                }
            }
        }
        count += 1;
    }
    (count, label)
}

/// Phantom survival for the avoidance condition: the alive set starts as the
/// whole first complement, may spread through its complement component, and
/// is cut by the next complement. Returns the survivors at the last slice.
pub fn phantom_survivors(region: &MovingRegion) -> usize {
    let grid = region.grid;
    let comp = region.complement();
    let mut alive = comp[0].clone();
    for m in 0..comp.len() {
        let (_, label) = components(&grid, &comp[m]);
        let mut hit = Vec::new();
        for k in 0..grid.len() {
            if alive[k] {
                if let Some(l) = label[k] {
                    hit.push(l);
                }
            }
        }
        hit.sort_unstable();
        hit.dedup();
        let spread: Vec<bool> =
            label.iter().map(|l| l.is_some_and(|l| hit.binary_search(&l).is_ok())).collect();
        if m + 1 == comp.len() {
            return spread.iter().filter(|&&b| b).count();
        }
        alive = spread.iter().zip(&comp[m + 1]).map(|(&a, &c)| a && c).collect();
    }
    0
}

/// Outcome of the geometric checks on `X(ω₀, t, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionAssumptionReport {
    /// The curve stays inside the moving region and inside Ω.
    pub a3a: bool,
    /// First time node where the curve leaves the region, if any.
    pub a3a_first_failure: Option<f64>,
    /// The union of all sections covers every node.
    pub a3b: bool,
    pub a3b_uncovered: usize,
    /// The complement is nonempty and connected outside `(t1, t2)`.
    pub a3c: bool,
    /// The complement has exactly two components on `(t1, t2)`.
    pub a3d: bool,
    pub component_counts: Vec<usize>,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    /// No phantom avoids the region over `[0, T]`, at `dt` and `dt/2`.
    pub a3e: bool,
    pub a3e_survivors: usize,
    pub a3e_survivors_refined: usize,
    pub a3e_consistent: bool,
    pub grid_nodes: [usize; 2],
    pub time_steps: usize,
    pub dt_flow: f64,
}

impl RegionAssumptionReport {
    pub fn all_hold(&self) -> bool {
        self.a3a && self.a3b && self.a3c && self.a3d && self.a3e
    }
}

/// Check the sweeping conditions for `X(ω₀, t, 0)` and the curve `gamma`.
pub fn check_assumption(
    flow: &FlowMap,
    omega0: RegionShape,
    grid: &SpatialGrid,
    time: &TimeGrid,
    gamma: impl Fn(f64) -> Point,
) -> Result<RegionAssumptionReport> {
    let region = rasterize_region(flow, omega0, grid, time)?;
    let dim = grid.dim();

    let mut a3a_first_failure = None;
    for m in 0..time.nodes() {
        let t = time.t(m);
        let g = gamma(t);
        let back = flow.integrate(g, t, 0.0)?;
        if !(grid.contains(g) && omega0.contains(back, dim)) {
            a3a_first_failure = Some(t);
            break;
        }
    }

    let mut covered = vec![false; grid.len()];
    for mask in region.masks() {
        for (c, &b) in covered.iter_mut().zip(mask) {
            *c |= b;
        }
    }
    let a3b_uncovered = covered.iter().filter(|&&c| !c).count();

    let comp = region.complement();
    let counts: Vec<usize> = comp.iter().map(|c| components(grid, c).0).collect();
    let lead = counts.iter().take_while(|&&c| c == 1).count();
    let trail = counts.iter().rev().take_while(|&&c| c == 1).count();
    let (a3c, a3d, t1, t2) = if lead == counts.len() {
        (true, false, Some(time.horizon()), Some(time.horizon()))
    } else if lead == 0 || trail == 0 {
        (false, false, None, None)
    } else {
        let middle = &counts[lead..counts.len() - trail];
        let ok = middle.iter().all(|&c| c == 2);
        (ok, ok && !middle.is_empty(), Some(time.t(lead - 1)), Some(time.t(counts.len() - trail)))
    };

    let survivors = phantom_survivors(&region);
    let refined = rasterize_region(flow, omega0, grid, &time.refine(2))?;
    let survivors_refined = phantom_survivors(&refined);
    let consistent = (survivors == 0) == (survivors_refined == 0);

    Ok(RegionAssumptionReport {
        a3a: a3a_first_failure.is_none(),
        a3a_first_failure,
        a3b: a3b_uncovered == 0,
        a3b_uncovered,
        a3c,
        a3d,
        component_counts: counts,
        t1,
        t2,
        a3e: survivors == 0 && survivors_refined == 0,
        a3e_survivors: survivors,
        a3e_survivors_refined: survivors_refined,
        a3e_consistent: consistent,
        grid_nodes: [grid.n(0), grid.n(1)],
        time_steps: time.steps(),
        dt_flow: flow.dt_flow(),
    })
}

/// The standard one-dimensional sweep on `Ω = (0, 1)`: `ω₀ = (−a, a)` is
/// carried at unit speed per horizon, `F ≡ 1/T`, and the curve `Γ` runs from
/// `a/2` to `1 − a/2` inside the moving interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sweep1d {
    pub halfwidth: f64,
    pub horizon: f64,
}

impl Sweep1d {
    pub fn standard(horizon: f64) -> Self {
        Self { halfwidth: 0.15, horizon }
    }

    pub fn speed(&self) -> f64 {
        1.0 / self.horizon
    }

    pub fn omega0(&self) -> RegionShape {
        RegionShape::Interval { lo: -self.halfwidth, hi: self.halfwidth }
    }

    pub fn velocity(&self) -> VelocitySpec {
        VelocitySpec::Constant { c: [self.speed(), 0.0] }
    }

    pub fn flow(&self, dt_flow: f64) -> Result<FlowMap> {
        FlowMap::new(self.velocity(), 1, dt_flow)
    }

    /// Centre of the moving interval at time `t`.
    pub fn center(&self, t: f64) -> f64 {
        t * self.speed()
    }

    pub fn gamma(&self, t: f64) -> Point {
        let a = self.halfwidth;
        [0.5 * a + (1.0 - a) * t / self.horizon, 0.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g1(n: usize) -> SpatialGrid {
        SpatialGrid::new_1d(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn zero_field_is_identity() {
        let f = FlowMap::new(VelocitySpec::Zero, 2, 1e-3).unwrap();
        let x = [0.3, -0.7];
        assert_eq!(f.integrate(x, 0.0, 0.0).unwrap(), x);
        assert_eq!(f.integrate(x, 0.2, 0.9).unwrap(), x);
    }

    #[test]
    fn constant_field_translates() {
        let f = FlowMap::new(VelocitySpec::Constant { c: [1.5, -0.5] }, 2, 1e-2).unwrap();
        let y = f.integrate([0.1, 0.2], 0.3, 0.9).unwrap();
        assert!((y[0] - (0.1 + 1.5 * 0.6)).abs() < 1e-12);
        assert!((y[1] - (0.2 - 0.5 * 0.6)).abs() < 1e-12);
        let back = f.integrate([0.1, 0.2], 0.9, 0.3).unwrap();
        assert!((back[0] - (0.1 - 0.9)).abs() < 1e-12);
    }

    #[test]
    fn linear_field_is_exponential() {
        let f = FlowMap::new(VelocitySpec::Linear { m: [[1.0, 0.0], [0.0, 0.0]] }, 1, 1e-3).unwrap();
        let y = f.integrate([0.4, 0.0], 0.2, 1.2).unwrap();
        assert!((y[0] - 0.4 * 1.0f64.exp()).abs() < 1e-8);
    }

    #[test]
    fn bounding_box_guard() {
        let f = FlowMap::new(VelocitySpec::Constant { c: [1.0, 0.0] }, 1, 1e-2)
            .unwrap()
            .with_bounding_box([-1.0, -1.0], [1.0, 1.0]);
        assert!(matches!(f.integrate([0.5, 0.0], 0.0, 1.0), Err(LabError::TrajectoryEscaped { .. })));
    }

    #[test]
    fn static_region_masks() {
        let grid = g1(99);
        let time = TimeGrid::new(1.0, 10).unwrap();
        let f = FlowMap::new(VelocitySpec::Zero, 1, 1e-2).unwrap();
        let r = rasterize_region(&f, RegionShape::Interval { lo: 0.2, hi: 0.4 }, &grid, &time).unwrap();
        for m in 0..time.nodes() {
            for (k, &b) in r.mask(m).iter().enumerate() {
                let x = grid.point(k)[0];
                assert_eq!(b, x > 0.2 && x < 0.4);
            }
        }
    }

    #[test]
    fn translated_region_masks() {
        let grid = g1(99);
        let time = TimeGrid::new(1.0, 10).unwrap();
        let f = FlowMap::new(VelocitySpec::Constant { c: [1.0, 0.0] }, 1, 1e-2).unwrap();
        let r = rasterize_region(&f, RegionShape::Interval { lo: -0.1, hi: 0.1 }, &grid, &time).unwrap();
        let mask = r.mask(5);
        for (k, &b) in mask.iter().enumerate() {
            let x = grid.point(k)[0];
            if (x - 0.5).abs() < 0.099 {
                assert!(b);
            }
            if (x - 0.5).abs() > 0.101 {
                assert!(!b);
            }
        }
    }

    #[test]
    fn rotated_disc_keeps_area() {
        let grid = SpatialGrid::new_2d([-1.0, -1.0], [1.0, 1.0], [59, 59]).unwrap();
        let time = TimeGrid::new(1.0, 8).unwrap();
        let f = FlowMap::new(VelocitySpec::Rotation { center: [0.0, 0.0], rate: 1.0 }, 2, 1e-3).unwrap();
        let disc = RegionShape::Ball { center: [0.4, 0.0], radius: 0.3 };
        let r = rasterize_region(&f, disc, &grid, &time).unwrap();
        let h = grid.spacing(0);
        // cells within one layer of the circle: perimeter / h
        let layer = (2.0 * std::f64::consts::PI * 0.3 / h).ceil() as isize;
        let c0 = r.count(0) as isize;
        for m in 0..time.nodes() {
            assert!((r.count(m) as isize - c0).abs() <= layer);
            // the analytic rotated disc agrees node by node away from the rim
            let t = time.t(m);
            let centre = [0.4 * t.cos(), 0.4 * t.sin()];
            for (k, &b) in r.mask(m).iter().enumerate() {
                let p = grid.point(k);
                let d = ((p[0] - centre[0]).powi(2) + (p[1] - centre[1]).powi(2)).sqrt();
                if (d - 0.3).abs() > 1e-6 {
                    assert_eq!(b, d < 0.3);
                }
            }
        }
    }

    #[test]
    fn indicator_ramp_values() {
        assert_eq!(smoothstep5(0.0), 0.0);
        assert_eq!(smoothstep5(1.0), 1.0);
        assert!((smoothstep5(0.5) - 0.5).abs() < 1e-15);
        let grid = g1(199);
        let time = TimeGrid::new(1.0, 2).unwrap();
        let region = MovingRegion::fixed(RegionShape::Interval { lo: 0.3, hi: 0.7 }, grid, time);
        let h = grid.spacing(0);
        let rho = 9.0 * h;
        let chi = smooth_indicator(&region, rho).unwrap();
        for (k, &c) in chi.slice(1).iter().enumerate() {
            let x = grid.point(k)[0];
            assert!((0.0..=1.0).contains(&c));
            if !region.mask(1)[k] {
                assert_eq!(c, 0.0);
            }
            if x > 0.3 + rho + h && x < 0.7 - rho - h {
                assert_eq!(c, 1.0);
            }
        }
        // the node whose depth is half of rho sits at the ramp midpoint
        let first_in = (0..grid.len()).find(|&k| region.mask(1)[k]).unwrap();
        let mid = first_in + 4;
        assert!((chi.slice(1)[mid] - 0.5).abs() < 0.05);
        assert!(smooth_indicator(&region, h).is_err());
    }

    #[test]
    fn standard_sweep_satisfies_everything() {
        let sweep = Sweep1d::standard(1.0);
        let grid = g1(199);
        let time = TimeGrid::new(1.0, 200).unwrap();
        let flow = sweep.flow(1e-3).unwrap();
        let rep = check_assumption(&flow, sweep.omega0(), &grid, &time, |t| sweep.gamma(t)).unwrap();
        assert!(rep.all_hold(), "{rep:?}");
        let t1 = rep.t1.unwrap();
        assert!((t1 - 0.15).abs() < 0.02, "t1 = {t1}");
        assert!((rep.t2.unwrap() - 0.85).abs() < 0.02);
    }

    #[test]
    fn frozen_region_fails_cover_and_avoidance() {
        let grid = g1(99);
        let time = TimeGrid::new(1.0, 50).unwrap();
        let flow = FlowMap::new(VelocitySpec::Zero, 1, 1e-2).unwrap();
        let omega = RegionShape::Interval { lo: 0.4, hi: 0.6 };
        let rep = check_assumption(&flow, omega, &grid, &time, |_| [0.5, 0.0]).unwrap();
        assert!(!rep.a3b);
        assert!(!rep.a3e);
        assert!(rep.a3a);
    }

    #[test]
    fn full_cover_is_degenerate() {
        let grid = g1(49);
        let time = TimeGrid::new(1.0, 10).unwrap();
        let flow = FlowMap::new(VelocitySpec::Constant { c: [0.3, 0.0] }, 1, 1e-2).unwrap();
        let omega = RegionShape::Interval { lo: -5.0, hi: 5.0 };
        let rep = check_assumption(&flow, omega, &grid, &time, |_| [0.5, 0.0]).unwrap();
        assert!(rep.a3a && rep.a3b && rep.a3e);
        assert!(!rep.a3c && !rep.a3d);
        assert!(rep.component_counts.iter().all(|&c| c == 0));
    }

    proptest! {
        #[test]
        fn group_and_inversion(x0 in -1.0f64..1.0, x1 in -1.0f64..1.0, s in 0.0f64..1.0, t in 0.0f64..1.0) {
            let f = FlowMap::new(
                |p: Point, t: f64| [-(p[1]) + 0.3 * t, p[0] * (1.0 + 0.2 * t.sin())],
                2,
                1e-3,
            ).unwrap();
            let x = [x0, x1];
            let direct = f.integrate(x, 0.0, t).unwrap();
            let via = f.integrate(f.integrate(x, 0.0, s).unwrap(), s, t).unwrap();
            prop_assert!((direct[0] - via[0]).abs() < 1e-7 && (direct[1] - via[1]).abs() < 1e-7);
            let back = f.integrate(direct, t, 0.0).unwrap();
            prop_assert!((back[0] - x0).abs() < 1e-7 && (back[1] - x1).abs() < 1e-7);
        }

        #[test]
        fn masks_monotone_in_reference(lo in 0.0f64..0.5, w in 0.01f64..0.3, grow in 0.0f64..0.2, c in -1.0f64..1.0) {
            let grid = g1(60);
            let time = TimeGrid::new(1.0, 6).unwrap();
            let f = FlowMap::new(VelocitySpec::Constant { c: [c, 0.0] }, 1, 1e-2).unwrap();
            let small = RegionShape::Interval { lo, hi: lo + w };
            let big = small.dilate(grow);
            let a = rasterize_region(&f, small, &grid, &time).unwrap();
            let b = rasterize_region(&f, big, &grid, &time).unwrap();
            for m in 0..time.nodes() {
                for k in 0..grid.len() {
                    prop_assert!(!a.mask(m)[k] || b.mask(m)[k]);
                }
            }
        }

        #[test]
        fn indicator_support_in_mask(lo in 0.05f64..0.5, w in 0.1f64..0.4, c in -0.5f64..0.5) {
            let grid = g1(80);
            let time = TimeGrid::new(1.0, 4).unwrap();
            let f = FlowMap::new(VelocitySpec::Constant { c: [c, 0.0] }, 1, 1e-2).unwrap();
            let r = rasterize_region(&f, RegionShape::Interval { lo, hi: lo + w }, &grid, &time).unwrap();
            let chi = smooth_indicator(&r, 3.0 * grid.spacing(0)).unwrap();
            for m in 0..time.nodes() {
                for k in 0..grid.len() {
                    let v = chi.slice(m)[k];
                    prop_assert!((0.0..=1.0).contains(&v));
                    if v > 0.0 {
                        prop_assert!(r.mask(m)[k]);
                    }
                }
            }
        }
    }
}
