//! Margins of the six weight properties for the sweep profile η.
use sobolev_lab::experiment::{weights_check, weights_table, WeightsCheckConfig};

fn main() -> sobolev_lab::Result<()> {
    let report = weights_check(&WeightsCheckConfig::default())?;
    print!("{}", weights_table(&report)?.render());
    println!("tested nodes: {}, all pass: {}", report.tested_nodes, report.all_pass());
    Ok(())
}
