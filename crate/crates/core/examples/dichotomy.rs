//! Penalty sweep for a fixed subinterval against the standard sweep region.
//! Arguments: `bzk` or `bbm`, then optional node and step counts.
use std::f64::consts::PI;

use sobolev_lab::control::{dichotomy_diagnostic, ControlRegion};
use sobolev_lab::flow::{RegionShape, Sweep1d};
use sobolev_lab::grid::{SpatialGrid, TimeGrid};
use sobolev_lab::pde::{BbmCoefficients, Evolution};

fn main() -> sobolev_lab::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let bbm = args.first().is_some_and(|a| a == "bbm");
    let count = |k: usize, default: usize| args.get(k).and_then(|a| a.parse().ok()).unwrap_or(default);
    let grid = SpatialGrid::new_1d(0.0, 1.0, count(1, 199))?;
    let time = TimeGrid::new(1.0, count(2, 400))?;
    let evolution = if bbm {
        Evolution::bbm(grid, time, BbmCoefficients::constant(grid, time, [1.0, 0.0]))?
    } else {
        Evolution::bzk(grid, time)?
    };
    let rho = 0.05;
    let fixed = ControlRegion::fixed(RegionShape::Interval { lo: 0.3, hi: 0.5 }, grid, time, rho)?;
    let moving = ControlRegion::sweep(&Sweep1d::standard(1.0), grid, time, rho)?;
    let z0: Vec<f64> = grid.points().map(|p| (PI * p[0]).sin()).collect();
    let curve = dichotomy_diagnostic(&evolution, &z0, &fixed, &moving, &[1e-4, 1e-5, 1e-6, 1e-7, 1e-8])?;
    println!("{:>8} {:>8} {:>14} {:>14} {:>6} {:>10}", "beta", "region", "cost", "final", "iters", "status");
    for c in curve.fixed.iter().chain(&curve.moving) {
        println!(
            "{:>8.0e} {:>8} {:>14.6e} {:>14.6e} {:>6} {:>10?}",
            c.beta,
            c.region_kind.name(),
            c.cost,
            c.final_norm,
            c.cg_iters,
            c.status
        );
    }
    println!("growth per decade: fixed {:.3}, moving {:.3}", curve.growth_fixed, curve.growth_moving);
    Ok(())
}
