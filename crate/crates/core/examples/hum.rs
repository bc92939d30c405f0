//! Penalized HUM null control of BZK from the standard sweep.
//!
//! `cargo run --release --example hum [bzk|bbm] [beta]`
use sobolev_lab::csv::format_g12;
use sobolev_lab::experiment::{run_family, ExperimentConfig, Family};
use sobolev_lab::pde::Equation;

fn main() -> sobolev_lab::Result<()> {
    let mut cfg = ExperimentConfig::default();
    let mut args = std::env::args().skip(1);
    if args.next().as_deref() == Some("bbm") {
        cfg.equation = Equation::Bbm;
    }
    if let Some(b) = args.next() {
        cfg.hum.beta = b.parse().map_err(|_| sobolev_lab::LabError::InvalidParameter(format!("bad beta `{b}`")))?;
    }
    cfg.validate()?;
    let tables = run_family(&cfg, Family::Hum)?;
    print!("{}", tables[0].1.render());
    let history = &tables[1].1;
    println!("iterations: {}", history.rows().len().saturating_sub(1));
    println!("beta: {}", format_g12(cfg.hum.beta));
    Ok(())
}
