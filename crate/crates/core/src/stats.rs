//! Least-squares fits used for scaling exponents.

use crate::error::{invalid, Result};

/// Slope of the least-squares line through `(ln x, ln y)`.
///
/// Needs at least two points with positive coordinates.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(invalid("slope fit: length mismatch"));
    }
    if x.len() < 2 {
        return Err(invalid("slope fit needs at least two points"));
    }
    if x.iter().chain(y).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(invalid("slope fit needs finite positive values"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_slope(&lx, &ly)
}

/// Ordinary least-squares slope.
pub fn linear_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("slope fit: abscissae coincide"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}
