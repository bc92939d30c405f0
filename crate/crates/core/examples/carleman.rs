//! Carleman suites on the standard sweep: max LHS/RHS ratio over random
//! test functions at a base parameter and at twice it.
//! Arguments: λ, s₀, τ₀ (defaults 1, 4, 16).
use sobolev_lab::carleman::{run_suite, Inequality, SuiteSetup};

fn main() -> sobolev_lab::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let arg = |k: usize, d: f64| args.get(k).copied().unwrap_or(d);
    let setup = SuiteSetup::standard_sweep(99, 100, arg(0, 1.0), arg(1, 4.0), arg(2, 16.0), 7)?;
    println!("{:>12} {:>10} {:>14} {:>14} {:>8}", "inequality", "param", "max ratio", "max doubled", "stable");
    for which in Inequality::ALL {
        let r = run_suite(&setup, which)?;
        println!(
            "{:>12} {:>10} {:>14.6e} {:>14.6e} {:>8}",
            which.name(),
            r.parameter,
            r.max_ratio,
            r.max_ratio_doubled,
            r.stable(1.1)
        );
    }
    Ok(())
}
