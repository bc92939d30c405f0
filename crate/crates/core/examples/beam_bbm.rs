//! WKB packet sweep for BBM with A ≡ 1 on Ω = (0, 2).
//!
//! `cargo run --release --example beam_bbm [printed|cancelling]`
use sobolev_lab::beams::CorrectorConvention;
use sobolev_lab::experiment::{beam_bbm, beam_table, BeamBbmConfig};

fn main() -> sobolev_lab::Result<()> {
    let mut cfg = BeamBbmConfig::default();
    if std::env::args().nth(1).as_deref() == Some("cancelling") {
        cfg.convention = CorrectorConvention::Cancelling;
    }
    let report = beam_bbm(&cfg)?;
    print!("{}", beam_table(&report, "h", "residual_norm")?.render());
    Ok(())
}
