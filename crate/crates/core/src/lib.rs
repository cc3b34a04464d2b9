//! SpO2 estimation from facial RGB traces.
//!
//! The pipeline builds a spatio-temporal map of per-ROI mean colour traces,
//! splits it into slow (DC) and pulsatile (AC) components with zero-phase
//! Butterworth filters, and feeds the components to dual-branch residual
//! networks fused by squeeze-and-excitation gates. Ratio-of-ratios and
//! linear-regression baselines and a synthetic subject generator with exact
//! ground truth are included.

pub mod baselines;
pub mod error;
pub mod filters;
pub mod formats;
pub mod harness;
pub mod models;
pub mod stmap;
pub mod synth;
pub mod tensornet;

pub use error::{Error, Result};
