//! Fourier beam sweep for BZK: the localized norm vanishes with ε while the
//! initial energy stays bounded below.
//!
//! `cargo run --release --example beam_bzk [nodes]`
use sobolev_lab::experiment::{beam_bzk, beam_table, BeamBzkConfig};

fn main() -> sobolev_lab::Result<()> {
    let mut cfg = BeamBzkConfig::default();
    if let Some(n) = std::env::args().nth(1) {
        cfg.nodes = n.parse().map_err(|_| sobolev_lab::LabError::InvalidParameter(format!("bad node count `{n}`")))?;
    }
    let report = beam_bzk(&cfg)?;
    print!("{}", beam_table(&report, "epsilon", "parseval_norm")?.render());
    Ok(())
}
