//! Finite-difference laboratory for the controllability of the
//! Barenblatt–Zheltov–Kochina and Benjamin–Bona–Mahony equations.

// `!(x > 0.0)` guards reject NaN on purpose; stencil loops index several
// parallel arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod beams;
pub mod carleman;
pub mod control;
pub mod csv;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod grid;
pub mod pde;
pub mod stats;
pub mod weights;

pub use error::{LabError, Result};
