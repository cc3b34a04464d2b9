//! Regression losses returning the value together with `d loss / d pred`.

use super::Tensor;
use crate::error::{shape_err, Error, Result};

/// Denominator guard for the Pearson coefficient.
pub const PEARSON_EPS: f64 = 1e-8;
/// Sum of squared deviations at or below this counts as zero variance.
const ZERO_VARIANCE: f64 = 1e-20;

/// Mean of squared errors over all elements.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() || pred.is_empty() {
        return Err(shape_err!("mse_loss: {:?} vs {:?}", pred.shape(), target.shape()));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.data().iter().zip(target.data()) {
        let d = p - t;
        loss += d * d;
        grad.push(2.0 * d / n);
    }
    Ok((loss / n, Tensor::from_vec(pred.shape(), grad)?))
}

/// Pearson correlation with the zero-variance convention `r = 0`.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    pearson_parts(x, y).r
}

struct PearsonParts {
    r: f64,
    dx: Vec<f64>,
    dy: Vec<f64>,
    sxx: f64,
    syy: f64,
    sxy: f64,
    denom: f64,
    degenerate: bool,
}

fn pearson_parts(x: &[f64], y: &[f64]) -> PearsonParts {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let dx: Vec<f64> = x.iter().map(|v| v - mx).collect();
    let dy: Vec<f64> = y.iter().map(|v| v - my).collect();
    let sxx: f64 = dx.iter().map(|v| v * v).sum();
    let syy: f64 = dy.iter().map(|v| v * v).sum();
    let sxy: f64 = dx.iter().zip(&dy).map(|(a, b)| a * b).sum();
    let degenerate = sxx <= ZERO_VARIANCE || syy <= ZERO_VARIANCE;
    let denom = sxx.sqrt() * syy.sqrt() + PEARSON_EPS;
    let r = if degenerate { 0.0 } else { sxy / denom };
    PearsonParts { r, dx, dy, sxx, syy, sxy, denom, degenerate }
}

/// `1 - r(pred, target)` per row, averaged over rows.
///
/// Accepts `(D)` or `(B, D)` tensors with `D >= 2`.
pub fn negcorr_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(shape_err!("negcorr_loss: {:?} vs {:?}", pred.shape(), target.shape()));
    }
    let d = *pred.shape().last().ok_or_else(|| shape_err!("negcorr_loss: scalar input"))?;
    if d < 2 || pred.rank() > 2 {
        return Err(Error::Length(format!("negcorr_loss needs rows of length >= 2, got shape {:?}", pred.shape())));
    }
    let rows = pred.len() / d;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for (i, (p, t)) in pred.data().chunks(d).zip(target.data().chunks(d)).enumerate() {
        let parts = pearson_parts(p, t);
        loss += 1.0 - parts.r;
        if parts.degenerate {
            continue;
        }
        // dr/dp_k = dy_k / D - sxy * sqrt(syy) * dx_k / (sqrt(sxx) * D^2)
        let sx = parts.sxx.sqrt();
        let k = parts.sxy * parts.syy.sqrt() / (sx * parts.denom * parts.denom);
        for (j, g) in grad[i * d..(i + 1) * d].iter_mut().enumerate() {
            let dr = parts.dy[j] / parts.denom - k * parts.dx[j];
            *g = -dr / rows as f64;
        }
    }
    Ok((loss / rows as f64, Tensor::from_vec(pred.shape(), grad)?))
}
