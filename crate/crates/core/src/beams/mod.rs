//! Concentrating adjoint solutions that defeat fixed-region observability:
//! the Fourier-side BZK beam and the WKB packet for BBM.

mod bbm;
mod bzk;
pub mod quadrature;

pub use bbm::{
    bbm_beam_sweep, bbm_correction, bbm_wkb_fields, bbm_wkb_fields_with, CorrectorConvention, WkbBeamParams,
    WkbFields,
};
pub use bzk::{
    boundary_data, bzk_beam_evaluate, bzk_beam_sweep, bzk_boundary_correction, BzkBeam, BzkBeamParams,
    THETA_POWER,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::pde::Equation;
use crate::stats::loglog_slope;

/// Norms of one member of a sweep. All norms are squared `L²` norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamRow {
    /// `ε` for BZK, `h` for BBM.
    pub param: f64,
    /// `‖ψ(·,0)‖²_{L²(Ω)}`.
    pub norm_initial: f64,
    /// `‖ψ‖²_{L²(region × (0,T))}`.
    pub norm_localized: f64,
    /// Space-time norm of the correction (`ψ*` or the WKB correction).
    pub norm_correction: f64,
    /// `norm_localized / norm_initial`.
    pub ratio: f64,
    /// BZK: free-space `‖ψ̌(·,0)‖²` by Parseval. BBM: `‖R‖²_{L²(Q)}`.
    pub norm_aux: f64,
}

/// Least-squares log-log slopes against the sweep parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamSlopes {
    pub initial: f64,
    pub localized: f64,
    pub correction: f64,
    pub ratio: f64,
    pub aux: f64,
}

/// Sweep outcome; `slopes` is present only with at least four members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamReport {
    pub equation: Equation,
    pub rows: Vec<BeamRow>,
    pub slopes: Option<BeamSlopes>,
}

/// Minimum sweep length for a slope fit.
pub const MIN_FIT_POINTS: usize = 4;

impl BeamReport {
    pub fn new(equation: Equation, rows: Vec<BeamRow>) -> Result<Self> {
        let slopes = if rows.len() >= MIN_FIT_POINTS {
            let x: Vec<f64> = rows.iter().map(|r| r.param).collect();
            let fit = |f: fn(&BeamRow) -> f64| -> Result<f64> {
                let y: Vec<f64> = rows.iter().map(f).collect();
                if y.iter().all(|&v| v > 0.0 && v.is_finite()) {
                    loglog_slope(&x, &y)
                } else {
                    Ok(f64::NAN)
                }
            };
            Some(BeamSlopes {
                initial: fit(|r| r.norm_initial)?,
                localized: fit(|r| r.norm_localized)?,
                correction: fit(|r| r.norm_correction)?,
                ratio: fit(|r| r.ratio)?,
                aux: fit(|r| r.norm_aux)?,
            })
        } else {
            None
        };
        Ok(Self { equation, rows, slopes })
    }

    /// Whether the ratio decreases strictly as the parameter decreases.
    pub fn ratio_monotone(&self) -> bool {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| b.param.total_cmp(&a.param));
        rows.windows(2).all(|w| w[1].ratio < w[0].ratio)
    }
}
