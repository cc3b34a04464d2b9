//! Central finite-difference gradient verification.

use super::layers::{zero_grad, Module, Slot};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub len: usize,
    pub max_abs_error: f64,
    /// `max |analytic - numeric|` divided by the tensor's gradient scale
    /// `max(max |analytic|, max |numeric|)`.
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Compares `analytic` against central differences of `f` at `point`.
///
/// `point` and `analytic` are parallel lists of flat named tensors; `f` is
/// evaluated at perturbed copies of `point`.
pub fn grad_check(
    names: &[String],
    point: &[Vec<f64>],
    analytic: &[Vec<f64>],
    h: f64,
    mut f: impl FnMut(&[Vec<f64>]) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut work: Vec<Vec<f64>> = point.to_vec();
    let mut report = GradCheckReport::default();
    for (t, name) in names.iter().enumerate() {
        let mut numeric = vec![0.0; point[t].len()];
        for i in 0..point[t].len() {
            let orig = work[t][i];
            work[t][i] = orig + h;
            let up = f(&work)?;
            work[t][i] = orig - h;
            let down = f(&work)?;
            work[t][i] = orig;
            numeric[i] = (up - down) / (2.0 * h);
        }
        report.entries.push(compare(name, &analytic[t], &numeric));
    }
    Ok(report)
}

fn compare(name: &str, analytic: &[f64], numeric: &[f64]) -> GradCheckEntry {
    let max_abs_error = analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let scale = analytic.iter().chain(numeric).map(|v| v.abs()).fold(0.0, f64::max);
    let max_rel_error = if scale > 0.0 { max_abs_error / scale } else { 0.0 };
    GradCheckEntry { name: name.to_string(), len: analytic.len(), max_abs_error, max_rel_error }
}

/// Checks every parameter gradient of a module.
///
/// `loss(m, backward)` must run a forward pass and return the scalar loss;
/// when `backward` is true it must also backpropagate so parameter
/// gradients are accumulated.
pub fn grad_check_module<M: Module + ?Sized>(
    module: &mut M,
    h: f64,
    mut loss: impl FnMut(&mut M, bool) -> Result<f64>,
) -> Result<GradCheckReport> {
    zero_grad(module);
    loss(module, true)?;
    let mut names = Vec::new();
    let mut point = Vec::new();
    let mut analytic = Vec::new();
    module.visit("", &mut |name, s| {
        if let Slot::Param(p) = s {
            names.push(name.to_string());
            point.push(p.value.data().to_vec());
            analytic.push(p.grad().to_vec());
        }
    });
    let report = grad_check(&names, &point, &analytic, h, |pt| {
        write_params(module, pt);
        loss(module, false)
    });
    write_params(module, &point);
    report
}

fn write_params<M: Module + ?Sized>(module: &mut M, values: &[Vec<f64>]) {
    let mut i = 0;
    module.visit("", &mut |_, s| {
        if let Slot::Param(p) = s {
            p.value.data_mut().copy_from_slice(&values[i]);
            i += 1;
        }
    });
}
