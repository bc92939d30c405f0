//! Sweeping conditions for the standard 1D sweep and for F ≡ 0.
use sobolev_lab::experiment::{assumption_table, flow_check, FlowCheckConfig};
use sobolev_lab::flow::VelocitySpec;

fn main() -> sobolev_lab::Result<()> {
    let sweep = flow_check(&FlowCheckConfig::default())?;
    println!("standard sweep (all hold: {})", sweep.all_hold());
    print!("{}", assumption_table(&sweep)?.render());
    let frozen = flow_check(&FlowCheckConfig { velocity: Some(VelocitySpec::Zero), ..Default::default() })?;
    println!("\nF = 0 (all hold: {})", frozen.all_hold());
    print!("{}", assumption_table(&frozen)?.render());
    Ok(())
}
